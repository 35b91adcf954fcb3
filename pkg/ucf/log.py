import sys
from os import get_terminal_size
from pathlib import Path

from loguru import logger
from rich.console import Console
from rich.table import Table


def terminal_width():
    try:
        return get_terminal_size().columns
    except OSError:
        return 80


WIDTH = min(120, terminal_width() - 10)

# progress and banners go to stderr; stdout is reserved for artifact paths
console = Console(stderr=True)

print_stdout = True

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level>"
    " | <level>{message}</level>"
)


def setup_logging(quiet: bool = False) -> None:
    """
    Replace loguru's default sink with a stderr sink matching the console verbosity.
    """
    global print_stdout
    print_stdout = not quiet
    logger.remove()
    logger.add(sys.stderr, level="WARNING" if quiet else "INFO", format=LOG_FORMAT)


def add_file_sink(log_file: Path) -> int:
    """
    Attach a DEBUG sink writing to `log_file`. Returns the sink id for removal.
    """
    log_file.parent.mkdir(parents=True, exist_ok=True)
    return logger.add(log_file, level="DEBUG", format=LOG_FORMAT)


def log_exception(exception):
    # DEBUG keeps the traceback in info.log and off the stderr sink
    logger.opt(exception=exception).debug("command failed: {}", exception)


def print_banner(msg: str) -> None:
    if not print_stdout:
        return

    banner = f" {msg} ".center(WIDTH, "=")
    console.print()
    console.print(banner, style="bold")
    console.print()


def print_table(title: str, columns: list[str], rows: list[list[str]]) -> None:
    """
    Render a summary table (e.g. the classifier comparison) on the console.
    """
    if not print_stdout:
        return
    table = Table(title=title, width=WIDTH)
    for col in columns:
        table.add_column(col)
    for row in rows:
        table.add_row(*row)
    console.print(table)
