from .errors import EmptyDataError, SchemaError
from .render import FIGURE_KINDS, PlotSpec, Series, build_figure, render

__version__ = "0.1.0"
