import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formpair.candidates import generate_candidates
from formpair.errors import InvalidInputError
from formpair.evaluation import pair_key
from formpair.geometry import BoxClass
from formpair.synth import SynthSpec, generate_synthetic_pages, nn_noise_scale


def gap(a, b):
    dx = max(a[0] - b[2], b[0] - a[2], 0.0)
    dy = max(a[1] - b[3], b[1] - a[3], 0.0)
    return (dx * dx + dy * dy) ** 0.5


def test_deterministic():
    spec = SynthSpec(n_pages=5, seed=11)
    assert generate_synthetic_pages(spec) == generate_synthetic_pages(spec)
    assert generate_synthetic_pages(spec) != generate_synthetic_pages(SynthSpec(n_pages=5, seed=12))


def test_label_left_zero_jitter_nearest_neighbor():
    pages = generate_synthetic_pages(SynthSpec(n_pages=10, layout="label-left", jitter=0.0, seed=4))
    checked = 0
    for page in pages:
        by_id = page.boxes_by_id
        for label, value in page.relationships:
            v = by_id[value]
            opposite = [b for b in page.boxes if b.cls is not v.cls]
            nearest = min(opposite, key=lambda b: (gap(b.rect, v.rect), b.id))
            assert nearest.id == label
            checked += 1
    assert checked > 50


@given(st.integers(0, 10**6), st.sampled_from(["label-left", "label-above", "mixed"]))
@settings(max_examples=25)
def test_no_distractors_full_recall(seed, layout):
    for page in generate_synthetic_pages(SynthSpec(n_pages=2, distractors=0, seed=seed, layout=layout)):
        cands = {p.key for p in generate_candidates(page.boxes)}
        assert {pair_key(a, b) for a, b in page.relationships} <= cands


def test_structure():
    pages = generate_synthetic_pages(SynthSpec(n_pages=20, seed=3))
    assert len({p.page_id for p in pages}) == 20
    multi = 0
    for page in pages:
        by_id = page.boxes_by_id
        for a, b in page.relationships:
            assert by_id[a].cls is BoxClass.PREPRINTED and by_id[b].cls is BoxClass.INPUT
        counts = page.gt_neighbor_counts()
        multi += sum(1 for k, n in counts.items() if n >= 2)
        assert all(b.nn_pred >= 0 for b in page.boxes)
    assert multi > 0


def test_nn_accuracy_roughly_matches():
    pages = generate_synthetic_pages(SynthSpec(n_pages=60, seed=5, nn_accuracy=0.72))
    hits = total = 0
    for page in pages:
        counts = page.gt_neighbor_counts()
        for b in page.boxes:
            if counts[b.id] >= 1:
                total += 1
                hits += round(b.nn_pred) == counts[b.id]
    assert hits / total == pytest.approx(0.72, abs=0.05)


def test_perfect_accuracy_is_exact():
    for page in generate_synthetic_pages(SynthSpec(n_pages=3, nn_accuracy=1.0)):
        counts = page.gt_neighbor_counts()
        assert all(b.nn_pred == counts[b.id] for b in page.boxes)
    assert nn_noise_scale(1.0) == 0.0


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        SynthSpec(rows=0)
    with pytest.raises(InvalidInputError):
        SynthSpec(layout="diagonal")
    with pytest.raises(InvalidInputError):
        SynthSpec(nn_accuracy=0.0)
