class FormationError(Exception):
    pass


class InvalidStateError(FormationError, ValueError):
    pass


class IntegrationDivergedError(FormationError):
    pass


class OrderingError(FormationError, ValueError):
    pass


class LinearizationError(FormationError):
    pass


class ContractError(FormationError, ValueError):
    pass


class QpInfeasibleError(FormationError):
    def __init__(self, message: str, certificate: dict):
        super().__init__(message)
        self.certificate = certificate


class L1ConfigError(FormationError, ValueError):
    pass


class TrainingDivergedError(FormationError):
    def __init__(self, message: str, checkpoint: dict, epoch: int):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch


class WeightsFormatError(FormationError, ValueError):
    def __init__(self, message: str, field: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}: {message}{where}")
        self.field = field
        self.line = line


class ConfigError(FormationError, ValueError):
    def __init__(
        self,
        message: str,
        path: str | None = None,
        line: int | None = None,
        column: int | None = None,
    ):
        location = ""
        if path is not None:
            location = str(path)
            if line is not None:
                location += f":{line}"
                if column is not None:
                    location += f":{column}"
            location += ": "
        super().__init__(location + message)
        self.path = path
        self.line = line
        self.column = column


class GroupingError(FormationError, ValueError):
    pass


class CorruptLogError(FormationError, ValueError):
    def __init__(self, message: str, path: str, row: int | None = None):
        where = f", row {row}" if row is not None else ""
        super().__init__(f"{path}{where}: {message}")
        self.path = path
        self.row = row
