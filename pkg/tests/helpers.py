"""Slate and item factories shared by the tests."""
import numpy as np

from prosocial_ranking.feed import ContentItem, Kind, Slate

WORDS = "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima mike november oscar".split()


def make_item(iid: str, platform="Twitter", text: str | None = None, **kw) -> ContentItem:
    if text is None:
        text = f"organic post {iid} about everyday things"
    return ContentItem(iid, platform, text=text, **kw)


def random_slate(
    rng: np.random.Generator,
    n: int,
    platform="Twitter",
    kind=Kind.POST,
    p_ad: float = 0.05,
    p_textless: float = 0.05,
    prefix: str = "s",
    **kw,
) -> Slate:
    items = []
    for k in range(n):
        u = rng.random()
        words = " ".join(rng.choice(WORDS, size=int(rng.integers(3, 12))))
        if u < p_ad:
            items.append(ContentItem(f"{prefix}{k}", platform, kind, text=f"sponsored {words}", is_ad=True))
        elif u < p_ad + p_textless:
            items.append(ContentItem(f"{prefix}{k}", platform, kind, text=""))
        else:
            items.append(ContentItem(f"{prefix}{k}", platform, kind, text=f"{words} {k}"))
    return Slate(platform, kind, tuple(items), **kw)


