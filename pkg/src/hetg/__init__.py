"""Language-model edge discrimination and edge reweighting for heterophilic graphs."""

__version__ = "0.1.0"
