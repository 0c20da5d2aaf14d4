"""Re-rank a single Twitter page under every arm and compare the results.

Run with ``python demos/rerank_one_slate.py``.
"""
import datetime as dt

from prosocial_ranking import ContentItem, Enrollment, RankerId, RankingRequest, RankingService, Slate, SimClock
from prosocial_ranking.feed import normalized_rank_change
from prosocial_ranking.serving import day_start_ms

texts = [
    "the senate vote on the budget is tomorrow",
    "my cat learned to open the fridge",
    "new poll shows voters split on immigration",
    "weekend hiking photos from the ridge",
    "city council debates the transit levy",
    "recipe: lemon pasta in ten minutes",
    "congress hearing on election security",
    "who else is watching the game tonight",
]
items = [ContentItem(f"p{k}", "Twitter", text=t) for k, t in enumerate(texts)]
items.insert(4, ContentItem("ad0", "Twitter", text="sponsored shoes", is_ad=True))
page = Slate("Twitter", "Post", tuple(items), request_id="demo")

# one enrolled user per arm, all past the ramp-up so every ranker is live.
# Arms that insert items draw from an inventory; with none attached they
# pass the page through unchanged.
start = dt.date(2024, 8, 1)
clock = SimClock(day_start_ms(dt.date(2024, 10, 1)))
users = [Enrollment(f"user-{r.value}", start, r) for r in RankerId]
svc = RankingService(users, clock=clock, seed=0)

for e in users:
    resp = svc.handle(RankingRequest(e.user_id, page))
    change = normalized_rank_change(page, resp.slate)
    print(f"{e.arm.value:30s} change={change:.3f}  {' '.join(resp.slate.ids)}")

# the ad stays where the platform put it in every arm
