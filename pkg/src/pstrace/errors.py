class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class ConfigError(ValueError):
    pass
