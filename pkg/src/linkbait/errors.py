"""Exception hierarchy shared by the simulator and the defense library."""

from __future__ import annotations


class LinkbaitError(Exception):
    """Base class for every error raised by this package."""


class TopologyError(LinkbaitError):
    pass


class DisconnectedServer(TopologyError):
    pass


class DuplicateId(TopologyError):
    pass


class NonPositiveBandwidth(TopologyError):
    pass


class UnknownRouter(TopologyError):
    pass


class InvalidAttachment(TopologyError):
    pass


class UnknownEndpoint(TopologyError):
    pass


class InfeasibleProfile(TopologyError):
    pass


class UnreachableDestination(LinkbaitError):
    pass


class NoLgServers(LinkbaitError):
    pass


class KTooLarge(LinkbaitError):
    pass


class InvalidTau(LinkbaitError):
    pass


class NoBranchAvailable(LinkbaitError):
    pass


class SingleClassTraining(LinkbaitError):
    pass


class EmptyLinkmap(LinkbaitError):
    pass


class ConfigInvalid(LinkbaitError):
    """Raised with a mapping of field name to diagnostic message."""

    def __init__(self, problems: dict[str, str]):
        self.problems = dict(problems)
        detail = "; ".join(f"{k}: {v}" for k, v in sorted(self.problems.items()))
        super().__init__(f"invalid scenario config: {detail}")


class InvariantViolation(LinkbaitError):
    pass
