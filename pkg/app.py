import os

import pandas as pd
import streamlit as st

from errors import LabError
from experiment_config import load_config
from experiments import run_experiment
from global_settings import CONFIG_DIR, LAB_VERSION, SIGNIFICANCE_RULE
from logging_functions import reset_log


def list_configs():
    if not os.path.isdir(CONFIG_DIR):
        return []
    return sorted(name for name in os.listdir(CONFIG_DIR) if name.endswith((".yaml", ".yml")))


def show_result(result, written):
    """Render the verdicts and the result table of a finished run."""
    if result.verdicts:
        verdicts = pd.DataFrame([v.to_dict() for v in result.verdicts])
        failed = int(sum(v.failed for v in result.verdicts))
        if failed:
            st.error(f"{failed} verdict(s) failed or were inconclusive")
        else:
            st.success("All verdicts passed")
        st.dataframe(verdicts, use_container_width=True)
    st.markdown("#### Results")
    st.dataframe(result.table.to_dataframe(), use_container_width=True)
    if result.notes:
        st.json(result.notes)
    for path in written:
        st.write(f"wrote `{path}`")


def main():
    """
    Streamlit front-end of the lab.

    Lists the experiment files in CONFIG_DIR, applies the same overrides as
    the command line (h, seed, threads) and runs the selected file through
    the same orchestrator. The last result is kept in st.session_state so
    that reruns of the page do not recompute it.
    """
    st.set_page_config(layout="wide")
    st.sidebar.title("Riesz lab")
    st.sidebar.markdown(f"Version {LAB_VERSION}")
    st.sidebar.caption(SIGNIFICANCE_RULE)

    configs = list_configs()
    if not configs:
        st.warning(f"No experiment files found in {CONFIG_DIR}")
        return
    name = st.sidebar.selectbox("Experiment file", configs)
    h = st.sidebar.text_input("Cell size override (e.g. 1/32, blank keeps the file)")
    seed = st.sidebar.number_input("Seed", min_value=0, value=0, step=1)
    override_seed = st.sidebar.checkbox("Override seed", value=False)
    threads = st.sidebar.number_input("Threads", min_value=1, value=1, step=1)

    path = os.path.join(CONFIG_DIR, name)
    with open(path, "r") as file:
        st.code(file.read(), language="yaml")

    col1, col2 = st.columns(2)
    if col1.button("Run experiment"):
        try:
            config = load_config(path).with_overrides(
                h=h or None, seed=int(seed) if override_seed else None, threads=int(threads)
            )
            with st.spinner(f"Running {config.kind}..."):
                st.session_state["last_run"] = (name, *run_experiment(config))
        except LabError as e:
            st.error(str(e))
    if col2.button("Clear log"):
        reset_log()
        st.session_state.pop("last_run", None)
        st.rerun()

    if "last_run" in st.session_state:
        run_name, result, written = st.session_state["last_run"]
        st.markdown(f"### {result.experiment} ({run_name})")
        show_result(result, written)


if __name__ == "__main__":
    main()
