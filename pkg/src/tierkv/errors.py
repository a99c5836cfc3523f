class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""
