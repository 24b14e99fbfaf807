import json

import numpy as np
import pytest

from deskvid.datapipe import (
    ClipRecord, FilterConfig, TierThresholds, blur_score, conform, filter_tier, jitter_score, laplacian_variance,
    motion_score, preprocess_admit, read_clip, read_metadata, right_closed_histogram, score_clip, segment_clips,
    stats_report, text_area_fraction, tier_violation, word_frequencies, write_clip,
)
from deskvid.synth import DEFECTS
from oracles import checkerboard, laplacian_variance_by_convolution

GOOD = {"duration": 5.0, "bpp": 0.1, "fps": 24.0, "width": 64, "height": 64, "codec_profile": "High"}


def removal_stages(result) -> dict[str, int]:
    """Source id -> stage that removed it: 0 admission/segmentation, k tier k, -1 never."""
    out = {r["id"]: 0 for r in result.rejected}
    by_source: dict[str, int] = {}
    for r in result.records:
        by_source[r.source_id] = min(by_source.get(r.source_id, 99), r.tier)
    n_tiers = len(FilterConfig().tiers)
    for src, tier in by_source.items():
        out[src] = -1 if tier == n_tiers else tier + 1
    return out


def scored(**kw) -> ClipRecord:
    base = dict(id="c", source_id="c", duration=4.0, fps=16.0, width=32, height=32, bpp=0.1, codec_profile="High",
                caption="", aesthetic=9.0, motion=5.0, blur=5000.0, blur_votes=0, ocr=0.0, jitter=0.0)
    base.update(kw)
    return ClipRecord(**base)


def static_frames(seconds: float, fps: float = 10.0, value: int = 128, hw: int = 8) -> np.ndarray:
    return np.full((int(round(seconds * fps)), hw, hw, 3), value, dtype=np.uint8)


def test_container_round_trip(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, (3, 5, 7, 3), dtype=np.uint8)
    write_clip(tmp_path / "a.dvc", frames, 23.976)
    back, fps = read_clip(tmp_path / "a.dvc")
    np.testing.assert_array_equal(back, frames)
    assert fps == pytest.approx(23.976, rel=1e-6)
    assert len((tmp_path / "a.dvc").read_bytes()) == 24 + frames.size
    (tmp_path / "bad.dvc").write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(ValueError):
        read_clip(tmp_path / "bad.dvc")


def test_admit_examples():
    assert preprocess_admit(GOOD) == (True, "")
    assert preprocess_admit(dict(GOOD, duration=1.5)) == (False, "duration")
    assert preprocess_admit(dict(GOOD, bpp=0.01)) == (False, "bpp")
    assert preprocess_admit(dict(GOOD, fps=12)) == (False, "fps")
    assert preprocess_admit(dict(GOOD, height=10, width=40)) == (False, "aspect")
    assert preprocess_admit(dict(GOOD, codec_profile="Constrained Baseline")) == (False, "profile")
    with pytest.raises(KeyError):
        preprocess_admit({"duration": 3.0})


def test_conform_caps_rate_and_size():
    frames = np.zeros((60, 1200, 2400, 3), dtype=np.uint8)
    out, fps = conform(frames, 60.0)
    assert fps == 30.0 and len(out) == 30
    assert out.shape[1:3] == (540, 1080)


def test_segment_examples():
    spans = segment_clips(static_frames(20), 10.0)
    assert [(b - a) / 10 for a, b in spans] == [8, 8, 4]
    assert segment_clips(static_frames(1.9), 10.0) == []
    cut = np.concatenate([static_frames(10, value=20), static_frames(2, value=230)])
    assert [(b - a) / 10 for a, b in segment_clips(cut, 10.0)] == [8, 2, 2]


def test_segment_spans_disjoint_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(20):
        parts = [static_frames(float(rng.uniform(0.5, 20)), value=int(v)) for v in rng.choice([10, 128, 250], 4)]
        frames = np.concatenate(parts)
        spans = segment_clips(frames, 10.0)
        for (a, b), (c, _) in zip(spans, spans[1:]):
            assert b <= c
        assert all(20 <= b - a <= 80 for a, b in spans)


def test_flat_video_is_blurry():
    frames = static_frames(3, hw=16)
    value, votes = blur_score(frames, 50.0)
    assert value == 0.0 and votes == 5
    rec = score_clip(scored(blur=None, blur_votes=None), frames)
    assert tier_violation(rec, FilterConfig().tiers[0]) in ("aesthetic", "motion", "blur")
    assert rec.blur < FilterConfig().tiers[0].blur_min


def test_checkerboard_laplacian_matches_convolution():
    for cell in (1, 2, 3):
        board = checkerboard(17, 23, cell)
        frame = np.repeat(board[..., None], 3, axis=-1).astype(np.uint8)
        assert laplacian_variance(frame) == pytest.approx(laplacian_variance_by_convolution(board), rel=1e-9)


def test_identical_frames_have_no_motion_or_jitter():
    frame = np.random.default_rng(0).integers(0, 256, (1, 16, 16, 3), dtype=np.uint8)
    frames = np.repeat(frame, 6, axis=0)
    assert motion_score(frames) == 0.0
    assert jitter_score(frames) == 0.0


def test_jitter_detects_translation():
    rng = np.random.default_rng(0)
    base = rng.integers(0, 256, (32, 32, 1)).astype(np.uint8)
    frames = np.stack([np.roll(base, (k % 2) * 2, axis=1) for k in range(6)])
    assert jitter_score(frames) == pytest.approx(2.0)


def test_blur_vote_flips_at_three_of_five():
    sharp = np.repeat(checkerboard(16, 16)[..., None], 3, axis=-1).astype(np.uint8)
    flat = np.full_like(sharp, 128)
    cfg = FilterConfig()
    for blurry in range(6):
        frames = np.stack([flat] * blurry + [sharp] * (5 - blurry))
        value, votes = blur_score(frames, cfg.tiers[0].blur_min)
        assert votes == blurry
        assert (value < cfg.tiers[0].blur_min) == (blurry >= 3)


def test_text_area_union_and_confidence():
    boxes = [((0, 0, 8, 8), 0.9), ((4, 4, 12, 12), 0.8), ((0, 8, 8, 16), 0.7)]
    assert text_area_fraction(boxes, 16, 16) == pytest.approx((64 + 64 - 16) / 256)


def test_ocr_only_violation():
    t = FilterConfig().tiers[0]
    assert tier_violation(scored(ocr=0.5), t) == "ocr"
    kept, removed = filter_tier([scored(id="a"), scored(id="b", ocr=0.5)], FilterConfig(), 1)
    assert [r.id for r in kept] == ["a"] and removed == [("b", "ocr")]


def test_motion_band_is_two_sided():
    t = FilterConfig().tiers[0]
    assert tier_violation(scored(motion=0.0), t) == "motion"
    assert tier_violation(scored(motion=100.0), t) == "motion"


def test_unscored_records_rejected():
    with pytest.raises(ValueError):
        tier_violation(scored(ocr=None), FilterConfig().tiers[0])


def test_tiers_must_tighten():
    loose = TierThresholds(2.5, 0.15, 30, 50, 0.3, 1.5)
    with pytest.raises(ValueError):
        FilterConfig(tiers=(loose, TierThresholds(1.0, 0.15, 30, 50, 0.3, 1.5)))
    cfg = FilterConfig.from_dict({"tiers": [vars(loose)], "min_fps": 10})
    assert cfg.min_fps == 10 and len(cfg.tiers) == 1


def test_tier_nesting_on_random_records():
    rng = np.random.default_rng(0)
    recs = [scored(id=str(i), aesthetic=rng.uniform(0, 10), motion=rng.uniform(0, 40), blur=rng.uniform(0, 4000),
                   ocr=rng.uniform(0, 0.5), jitter=rng.uniform(0, 2)) for i in range(500)]
    cfg = FilterConfig()
    kept = [{r.id for r in filter_tier(recs, cfg, k)[0]} for k in (1, 2, 3)]
    assert kept[1] <= kept[0] and kept[2] <= kept[1]


def test_synthetic_corpus_recall_and_precision(corpus_dir, curated):
    truth = json.loads((corpus_dir / "ground_truth.json").read_text())
    stages = removal_stages(curated)
    assert set(stages) == set(truth)
    for stage in (0, 1, 2, 3, -1):
        planted = {k for k, v in truth.items() if v["removed_at"] == stage}
        found = {k for k, v in stages.items() if v == stage}
        assert found == planted, stage
    assert {v["removed_at"] for v in truth.values()} == set(DEFECTS.values())


def test_curated_tier_nesting(curated):
    ids = [set(curated.tier_ids(k)) for k in (1, 2, 3)]
    assert ids[2] <= ids[1] <= ids[0]
    cfg = FilterConfig()
    t1 = filter_tier(curated.records, cfg, 1)[0]
    assert {r.id for r in filter_tier(t1, cfg, 2)[0]} == {r.id for r in filter_tier(curated.records, cfg, 2)[0]}


def test_scene_cut_clip_splits(curated, corpus_dir):
    truth = json.loads((corpus_dir / "ground_truth.json").read_text())
    cut = next(k for k, v in truth.items() if v["defect"] == "cut")
    durations = [r.duration for r in curated.records if r.source_id == cut]
    assert durations == [8.0, 2.0, 2.0]


def test_metadata_reader(corpus_dir):
    meta = read_metadata(corpus_dir / "metadata.jsonl")
    assert len(meta) == 60 and {"id", "path", "caption", "fps", "codec_profile", "bpp"} <= set(meta[0])


def test_stats_hand_bins():
    recs = [scored(id="a", duration=7.0, aesthetic=4.2, caption="a dog", height=32, width=64),
            scored(id="b", duration=2.0, aesthetic=9.99, caption="a cat", height=64, width=32),
            scored(id="c", duration=8.0, aesthetic=0.0, caption=" ".join(["w"] * 76))]
    rep = stats_report(recs)
    assert rep["duration"]["counts"] == [1, 0, 2]
    aest = rep["aesthetic"]["counts"]
    assert aest[0] == 1 and aest[8] == 1 and aest[19] == 1 and sum(aest) == 3
    assert rep["aspect"]["counts"] == [0, 1, 0, 1, 0, 1]
    assert rep["caption_words"]["counts"] == [2, 0, 0, 1, 0, 0, 0]
    assert rep["caption_words"]["fraction_over_75"] == pytest.approx(1 / 3)


def test_single_record_duration_bin():
    assert stats_report([scored(duration=7.0)])["duration"]["counts"] == [0, 0, 1]


def test_word_counts():
    assert dict(word_frequencies(["a dog", "a cat"])) == {"a": 2, "dog": 1, "cat": 1}
    assert word_frequencies(["A, dog!", "a DOG"])[0] == ("a", 2)
    assert word_frequencies(["", ""]) == []
    assert stats_report([scored(caption="")])["vocabulary_size"] == 0


def test_right_closed_bins():
    edges = np.array([0, 25, 50, 75, np.inf])
    assert right_closed_histogram([0, 25, 26, 75, 76], edges) == [2, 1, 1, 1]


def test_report_is_byte_identical(corpus_dir):
    from deskvid.datapipe import curate

    a = json.dumps(stats_report(curate(corpus_dir / "metadata.jsonl").records), sort_keys=True)
    b = json.dumps(stats_report(curate(corpus_dir / "metadata.jsonl").records), sort_keys=True)
    assert a == b


def test_corpus_generation_is_deterministic(tmp_path):
    from deskvid.synth import make_corpus

    make_corpus(tmp_path / "a", n_clips=30, seed=4)
    make_corpus(tmp_path / "b", n_clips=30, seed=4)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
