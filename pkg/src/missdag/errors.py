"""Exception hierarchy shared by all missdag modules."""


class MissDagError(Exception):
    """Base class for all missdag errors."""


# --- graphs ---

class CycleDetected(MissDagError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class UnknownVertex(MissDagError):
    pass


class DuplicateEdge(MissDagError):
    pass


class OverlappingSets(MissDagError):
    pass


class InvalidMGraph(MissDagError):
    pass


# --- data ---

class MalformedCsv(MissDagError):
    pass


class UnknownState(MissDagError):
    pass


class HeaderMismatch(MissDagError):
    pass


class NameCollision(MissDagError):
    pass


class IncompleteParameters(MissDagError):
    pass


class DriverMissing(MissDagError):
    pass


class UnknownVariable(MissDagError):
    pass


class AllMissingColumn(MissDagError):
    pass


class EmptyDataset(MissDagError):
    pass


class BadFraction(MissDagError):
    pass


# --- estimation ---

class MissingCellsPresent(MissDagError):
    pass


class SchemaMismatch(MissDagError):
    pass


class TooManyMissingInRow(MissDagError):
    pass


class EmptyList(MissDagError):
    pass


class AllZero(MissDagError):
    pass


# --- discovery ---

class KnowledgeViolatedByInput(MissDagError):
    pass


class KnowledgeInfeasible(MissDagError):
    pass
