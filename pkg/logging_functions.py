import logging
from global_settings import LOG_FILE

LOGGER_NAME = "rieszlab"


def get_logger():
    """
    Return the lab logger, attaching the file handler once.

    Returns:
        logging.Logger: Logger writing ``"<time>: <message>"`` lines to LOG_FILE.
    """
    root = logging.getLogger(LOGGER_NAME)
    if not any(getattr(h, "_rieszlab", False) for h in root.handlers):
        handler = logging.FileHandler(LOG_FILE)
        handler.setFormatter(
            logging.Formatter("%(asctime)s: %(message)s", datefmt="%Y-%m-%d %H:%M:%S")
        )
        handler._rieszlab = True
        root.addHandler(handler)
        root.setLevel(logging.INFO)
    return root


def log_action(action, action_type):
    get_logger().info("%s : %s", action_type, action)


def reset_log():
    for handler in get_logger().handlers:
        handler.flush()
    with open(LOG_FILE, "w") as file:
        file.truncate(0)
