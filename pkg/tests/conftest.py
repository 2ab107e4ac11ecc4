import itertools

import numpy as np
import pytest

from arenakit.votelog import BattleRecord, ChatTurn, TaxonomyTag, VoteOutcome


def make_record(
    rid="r1",
    left="A",
    right="B",
    outcome=VoteOutcome.LEFT_WIN,
    timestamp=1_700_000_000,
    rounds=1,
    tag=None,
    image_ids=("img1",),
    out_left=10,
    out_right=10,
    anonymous=True,
    reason=None,
):
    conv_left = []
    conv_right = []
    for k in range(rounds):
        user = ChatTurn(
            role="user", text=f"question {k}", image_ids=image_ids if k == 0 else ()
        )
        conv_left += [user, ChatTurn(role="assistant", text=f"{left} answer {k}")]
        conv_right += [user, ChatTurn(role="assistant", text=f"{right} answer {k}")]
    return BattleRecord(
        id=rid,
        timestamp=timestamp,
        model_left=left,
        model_right=right,
        anonymous=anonymous,
        conversation_left=tuple(conv_left),
        conversation_right=tuple(conv_right),
        outcome=outcome,
        input_tokens=5 * rounds,
        output_tokens_left=out_left,
        output_tokens_right=out_right,
        feedback_reason=reason,
        tag=tag,
    )


def make_tag(category="Descriptive", domain="Natural"):
    return TaxonomyTag(
        question_category=category,
        question_subcategory="sub",
        image_domain=domain,
        image_subdomain="subdom",
    )


def synthetic_log(true_ratings: dict, n_battles: int, seed: int, tie_prob: float = 0.0):
    """Battles sampled from the logistic win model at the given true ratings."""
    rng = np.random.default_rng(seed)
    models = sorted(true_ratings)
    pairs = list(itertools.combinations(models, 2))
    records = []
    for i in range(n_battles):
        a, b = pairs[rng.integers(0, len(pairs))]
        p = 1.0 / (1.0 + 10 ** ((true_ratings[b] - true_ratings[a]) / 400))
        if tie_prob and rng.random() < tie_prob:
            outcome = VoteOutcome.TIE
        elif rng.random() < p:
            outcome = VoteOutcome.LEFT_WIN
        else:
            outcome = VoteOutcome.RIGHT_WIN
        records.append(
            make_record(
                rid=f"b{i}", left=a, right=b, outcome=outcome,
                timestamp=1_700_000_000 + i,
            )
        )
    return records


@pytest.fixture
def two_model_records():
    return [
        make_record(rid="r1", outcome=VoteOutcome.LEFT_WIN),
        make_record(rid="r2", outcome=VoteOutcome.RIGHT_WIN),
        make_record(rid="r3", outcome=VoteOutcome.TIE),
        make_record(rid="r4", outcome=VoteOutcome.BOTH_BAD),
    ]
