class DataError(Exception):
    """Malformed or inconsistent input data (CSV files, graph files, configs)."""


class NumericalError(ArithmeticError):
    """Non-finite values encountered during training or gradient checks."""
