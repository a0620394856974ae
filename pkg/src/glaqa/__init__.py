"""Answer selection with a global-local attention model over a BiLSTM encoder."""

__version__ = "0.1.0"
