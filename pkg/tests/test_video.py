import json

import pytest

from trapkit.core import BBox, ClassScores, Detection, DetectionCategory, ImageRef
from trapkit.errors import EmptyVote, VideoDecodeError
from trapkit.pipeline import PipelineResult
from trapkit.video import (
    EMPTY_LABEL,
    FrameSequenceDir,
    classify_video,
    extract_frames,
    frame_vote,
    majority_vote,
    open_video,
)

from corpus import build_frame_video


class TestFrameSequenceDir:
    def test_requires_metadata(self, tmp_path):
        with pytest.raises(VideoDecodeError):
            FrameSequenceDir(tmp_path)

    def test_rejects_frame_count_mismatch(self, tmp_path):
        build_frame_video(tmp_path / "v", native_fps=10, frame_labels=[None, None])
        meta = tmp_path / "v" / "video.json"
        meta.write_text(json.dumps({"native_fps": 10, "frame_count": 5}))
        with pytest.raises(VideoDecodeError):
            FrameSequenceDir(tmp_path / "v")

    def test_rejects_bad_fps(self, tmp_path):
        build_frame_video(tmp_path / "v", native_fps=10, frame_labels=[None])
        (tmp_path / "v" / "video.json").write_text(json.dumps({"native_fps": 0}))
        with pytest.raises(VideoDecodeError):
            FrameSequenceDir(tmp_path / "v")

    def test_reads_frames_sorted(self, tmp_path):
        v = build_frame_video(tmp_path / "v", native_fps=5, frame_labels=[None] * 3)
        seq = FrameSequenceDir(v)
        assert seq.frame_count == 3
        assert seq.duration_s == pytest.approx(0.6)
        assert seq.frame_ref(1).path.endswith("frame_00001.png")

    def test_open_video_dispatches_directories(self, tmp_path):
        v = build_frame_video(tmp_path / "v", native_fps=5, frame_labels=[None])
        assert isinstance(open_video(v), FrameSequenceDir)
        with pytest.raises(VideoDecodeError):
            open_video(tmp_path / "missing.mp4")


class TestExtractFrames:
    def test_downsamples_sixty_fps_to_cap(self, tmp_path):
        # 2 s at 60 fps, cap 30 -> 60 samples at effective 30 fps
        v = build_frame_video(tmp_path / "v", native_fps=60, frame_labels=[None] * 120)
        samples, effective = extract_frames(v, target_fps=30)
        assert effective == 30
        assert len(samples) == 60
        assert [s.timestamp_s for s in samples[:4]] == [0.0, 1 / 30, 2 / 30, 3 / 30]
        # every other native frame
        assert samples[1].image.path.endswith("frame_00002.png")

    def test_never_upsamples(self, tmp_path):
        # 2 s at 24 fps, cap 30 -> all 48 native frames at effective 24 fps
        v = build_frame_video(tmp_path / "v", native_fps=24, frame_labels=[None] * 48)
        samples, effective = extract_frames(v, target_fps=30)
        assert effective == 24
        assert len(samples) == 48
        assert [s.image.path for s in samples] == [str(p) for p in FrameSequenceDir(v).frames]

    def test_short_video_yields_one_frame(self, tmp_path):
        v = build_frame_video(tmp_path / "v", native_fps=30, frame_labels=[None])
        samples, effective = extract_frames(v, target_fps=5)
        assert effective == 5
        assert len(samples) == 1
        assert samples[0].timestamp_s == 0.0

    def test_rejects_bad_target(self, tmp_path):
        v = build_frame_video(tmp_path / "v", native_fps=5, frame_labels=[None])
        with pytest.raises(ValueError):
            extract_frames(v, target_fps=0)


class TestMajorityVote:
    def test_plain_majority(self):
        label, tally = majority_vote([("a", 0.9), ("b", 0.8), ("a", 0.7)])
        assert label == "a"
        assert tally == {"a": 2, "b": 1}

    def test_tie_breaks_on_mean_confidence(self):
        label, _ = majority_vote([("a", 0.6), ("b", 0.9)])
        assert label == "b"

    def test_tie_breaks_lexicographically_last(self):
        label, _ = majority_vote([("b", 0.8), ("a", 0.8)])
        assert label == "a"

    def test_rejects_empty(self):
        with pytest.raises(EmptyVote):
            majority_vote([])


def _frame_result(entries):
    """entries: (det_conf, scores or None)"""
    detections = [
        (Detection(BBox(0.1, 0.1, 0.2, 0.2), DetectionCategory.ANIMAL, conf), scores)
        for conf, scores in entries
    ]
    return PipelineResult.build(ImageRef(path="f.png"), detections, 0.98)


class TestFrameVote:
    def test_empty_frame_votes_empty(self):
        assert frame_vote(_frame_result([])) == (EMPTY_LABEL, 1.0)

    def test_unclassified_detections_are_ignored(self):
        assert frame_vote(_frame_result([(0.9, None)])) == (EMPTY_LABEL, 1.0)

    def test_highest_confidence_detection_wins(self):
        low = ClassScores([("paca", 0.8), ("agouti", 0.2)])
        high = ClassScores([("agouti", 0.7), ("paca", 0.3)])
        result = _frame_result([(0.5, low), (0.9, high)])
        assert frame_vote(result) == ("agouti", 0.7)


class TestClassifyVideo:
    def test_majority_across_frames(self, tmp_path, oracle_backends):
        det, clf = oracle_backends
        labels = ["paca", "paca", "paca", "agouti", "agouti", None]
        v = build_frame_video(tmp_path / "v", native_fps=3, frame_labels=labels)
        result = classify_video(v, det, clf, target_fps=30)
        assert result.effective_fps == 3
        assert len(result.frame_results) == 6
        assert result.vote_tally == {"paca": 3, "agouti": 2, EMPTY_LABEL: 1}
        assert result.final_label == "paca"

    def test_tie_falls_back_to_lexicographic(self, tmp_path, oracle_backends):
        det, clf = oracle_backends
        # palette colors are mutually equidistant, so per-frame top
        # probabilities are identical and the mean-confidence tiebreak ties too
        labels = ["paca", "agouti", "paca", "agouti"]
        v = build_frame_video(tmp_path / "v", native_fps=2, frame_labels=labels)
        result = classify_video(v, det, clf, target_fps=30)
        assert result.vote_tally == {"paca": 2, "agouti": 2}
        assert result.final_label == "agouti"

    def test_all_empty_video(self, tmp_path, oracle_backends):
        det, clf = oracle_backends
        v = build_frame_video(tmp_path / "v", native_fps=4, frame_labels=[None] * 4)
        result = classify_video(v, det, clf)
        assert result.final_label == EMPTY_LABEL
        assert result.vote_tally == {EMPTY_LABEL: 4}
