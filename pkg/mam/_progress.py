"""Rich progress bars for long-running training and evaluation loops."""

from collections.abc import Iterable, Iterator
from enum import Enum, auto
from typing import Dict, List, NamedTuple, Optional, TypedDict, TypeVar

from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    ProgressColumn,
    SpinnerColumn,
    TaskProgressColumn,
    TextColumn,
    TimeElapsedColumn,
    TimeRemainingColumn,
)

from mam.utils import console

T = TypeVar("T")


class ColumnStyling(NamedTuple):
    """Styling for a progress bar column."""

    spinner_style: Optional[str] = None
    bar_width: Optional[int] = None
    complete_style: Optional[str] = None
    finished_style: Optional[str] = None


class ProgressTheme(TypedDict, total=False):
    """Theme for a progress bar."""

    spinner: str
    bar_width: int
    complete_style: str
    finished_style: str


class ProgressBarType(Enum):
    """Kinds of progress bars used by the package."""

    TRAIN = auto()
    EVAL = auto()


THEMES: Dict[str, ProgressTheme] = {
    "default": {
        "spinner": "dots",
        "bar_width": 40,
        "complete_style": "green",
        "finished_style": "bold green",
    },
}


def _columns_for(bar_type: ProgressBarType) -> List[ProgressColumn]:
    column_map: Dict[ProgressBarType, List[ProgressColumn]] = {
        ProgressBarType.TRAIN: [
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            TimeRemainingColumn(),
            TextColumn("{task.fields[status]}"),
        ],
        ProgressBarType.EVAL: [
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
        ],
    }
    return column_map[bar_type]


def _style(column: ProgressColumn, styling: ColumnStyling) -> ProgressColumn:
    if isinstance(column, SpinnerColumn) and styling.spinner_style:
        return SpinnerColumn(spinner_name=styling.spinner_style)
    if isinstance(column, BarColumn):
        return BarColumn(
            bar_width=styling.bar_width or column.bar_width,
            complete_style=styling.complete_style or column.complete_style,
            finished_style=styling.finished_style or column.finished_style,
        )
    return column


def create_progress(
    bar_type: ProgressBarType = ProgressBarType.TRAIN,
    theme: str = "default",
    disable: bool = False,
) -> Progress:
    """Create a themed progress bar bound to the shared console.

    Args:
        bar_type (ProgressBarType): Column layout to use.
        theme (str): Theme name; unknown names fall back to ``default``.
        disable (bool): Build a silent progress bar (workers, tests).

    Returns:
        Progress: A rich progress instance, not yet started.
    """
    settings = THEMES.get(theme, THEMES["default"])
    styling = ColumnStyling(
        settings.get("spinner"),
        settings.get("bar_width"),
        settings.get("complete_style"),
        settings.get("finished_style"),
    )
    columns = [_style(column, styling) for column in _columns_for(bar_type)]
    return Progress(*columns, console=console, transient=False, disable=disable)


def track(
    sequence: Iterable[T],
    description: str,
    total: Optional[int] = None,
    disable: bool = False,
) -> Iterator[T]:
    """Iterate over ``sequence`` while showing an evaluation progress bar."""
    progress = create_progress(ProgressBarType.EVAL, disable=disable)
    with progress:
        yield from progress.track(sequence, total=total, description=description)
