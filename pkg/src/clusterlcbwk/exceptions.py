class ValidationError(ValueError):
    """Invalid configuration or argument."""


class GenerationError(RuntimeError):
    pass


class ContractViolation(RuntimeError):
    """An operation was called outside its precondition."""


class NumericalError(ArithmeticError):
    pass
