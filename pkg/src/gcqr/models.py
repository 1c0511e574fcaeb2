"""Domain types shared across the retrieval and reformulation stages."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Document:
    """One corpus passage with a stable identifier."""

    doc_id: str
    text: str


@dataclass
class ConversationTurn:
    """Current query of a dialogue turn plus the ordered history of prior queries.

    ``baseline_query`` is the de-contextualized form consumed as input;
    ``history`` holds the prior turns' queries, oldest first.
    """

    conversation_id: str
    turn_id: int
    raw_query: str
    baseline_query: str
    history: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.turn_id < 1:
            raise ValueError(f"turn_id must be >= 1, got {self.turn_id}")
        if not self.baseline_query.strip():
            raise ValueError("baseline_query must be non-empty")

    @property
    def key(self) -> tuple[str, int]:
        return (self.conversation_id, self.turn_id)

    @property
    def key_str(self) -> str:
        return turn_key_str(self.conversation_id, self.turn_id)


def turn_key_str(conversation_id: str, turn_id: int) -> str:
    """Flatten a turn key to the ``conversationid_turnid`` qid convention."""
    return f"{conversation_id}_{turn_id}"


@dataclass
class RankedList:
    """Ordered (doc_id, score) pairs for one query.

    Scores are non-increasing and doc_ids unique; both are enforced at
    construction time.
    """

    query_key: tuple[str, int]
    entries: list[tuple[str, float]]

    def __post_init__(self):
        seen: set[str] = set()
        prev: float | None = None
        for doc_id, score in self.entries:
            if doc_id in seen:
                raise ValueError(f"duplicate doc_id in ranked list: {doc_id!r}")
            seen.add(doc_id)
            if prev is not None and score > prev:
                raise ValueError("ranked list scores must be non-increasing")
            prev = score

    def __len__(self) -> int:
        return len(self.entries)

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]

    def top(self, k: int) -> RankedList:
        """Prefix of the list with at most ``k`` entries."""
        if k < 0:
            raise ValueError("k must be >= 0")
        return RankedList(self.query_key, list(self.entries[:k]))
