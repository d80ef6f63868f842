"""promptlab: attribute-anchored soft-prompt learning on a miniature dual encoder."""

__version__ = "0.1.0"
