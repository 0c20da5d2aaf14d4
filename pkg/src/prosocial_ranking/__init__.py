"""Prosocial feed re-ranking: serving, simulation and difference-in-differences analysis."""
from .assignment import Enrollment, InterventionCalendar, assign, default_calendar
from .feed import ContentItem, RankingDecision, Slate, apply_decision, normalized_rank_change
from .rankers import RankContext, RankerId, dispatch
from .serving import RankingRequest, RankingResponse, RankingService, ServingConfig, SimClock

__version__ = "0.1.0"

__all__ = [
    "ContentItem",
    "Enrollment",
    "InterventionCalendar",
    "RankContext",
    "RankerId",
    "RankingDecision",
    "RankingRequest",
    "RankingResponse",
    "RankingService",
    "ServingConfig",
    "SimClock",
    "Slate",
    "apply_decision",
    "assign",
    "default_calendar",
    "dispatch",
    "normalized_rank_change",
]
