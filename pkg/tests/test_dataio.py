import math

import numpy as np
import pytest

from dcfl.assign import GtInstance
from dcfl.dataio import (
    DEFAULT_CLASSES,
    config_from_mapping,
    load_config,
    parse_detections_jsonl,
    parse_dota,
    read_offsets,
    read_prediction_fields,
    serialize_detections_jsonl,
    serialize_dota,
    write_offsets,
    write_prediction_fields,
)
from dcfl.errors import ConfigError, ParseError
from dcfl.evalkit import Detection
from dcfl.geom import OBox, canonicalize
from dcfl.priorfield import OffsetField


class TestParseDota:
    def test_unit_square(self):
        gts = parse_dota("0 0 2 0 2 2 0 2 ship 0")
        assert len(gts) == 1
        box = gts[0].box
        assert (box.cx, box.cy, box.w, box.h) == (1, 1, 2, 2)
        assert box.theta == pytest.approx(-math.pi / 2)
        assert gts[0].class_id == DEFAULT_CLASSES.index("ship")
        assert gts[0].difficulty == 0

    def test_nine_tokens_default_difficulty(self):
        gts = parse_dota("0 0 2 0 2 2 0 2 ship")
        assert gts[0].difficulty == 0

    def test_metadata_lines_skipped(self):
        text = "imagesource:GoogleEarth\ngsd:0.12\n0 0 2 0 2 2 0 2 ship 1\n"
        gts = parse_dota(text)
        assert len(gts) == 1 and gts[0].difficulty == 1

    def test_malformed_coordinate_names_line(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_dota("a b c d e f g h ship 0")

    def test_unknown_class_named(self):
        with pytest.raises(ParseError, match="dragon"):
            parse_dota("0 0 2 0 2 2 0 2 dragon 0")

    def test_wrong_token_count(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_dota("0 0 2 0 2 2 0 2 ship 0\n1 2 3\n")

    def test_roundtrip_preserves_boxes(self):
        rng = np.random.default_rng(0)
        gts = []
        for _ in range(50):
            w = rng.uniform(2, 80)
            h = w * rng.uniform(0.3, 1.0)
            box = canonicalize(
                OBox(rng.uniform(50, 700), rng.uniform(50, 700), w, h, rng.uniform(-3, 3))
            )
            gts.append(GtInstance(box, int(rng.integers(0, 8)), int(rng.integers(0, 2))))
        back = parse_dota(serialize_dota(gts))
        assert len(back) == len(gts)
        for a, b in zip(gts, back):
            assert a.class_id == b.class_id
            assert a.difficulty == b.difficulty
            for u, v in zip(a.box.as_tuple(), b.box.as_tuple()):
                assert abs(u - v) < 1e-6


class TestConfig:
    def test_empty_mapping_gives_defaults(self):
        cfg = config_from_mapping({})
        assert (cfg.dcfl.k, cfg.dcfl.q, cfg.dcfl.g) == (16, 12, 0.8)
        assert (cfg.dcfl.w1, cfg.dcfl.alpha) == (0.7, 0.5)
        assert cfg.dcfl.strides == (8, 16, 32, 64, 128)
        assert cfg.dcfl.scale_factor == 4.0
        assert cfg.classes == DEFAULT_CLASSES
        assert cfg.image_size == (800.0, 800.0)

    def test_k12_q10_accepted(self):
        cfg = config_from_mapping({"k": 12, "q": 10})
        assert (cfg.dcfl.k, cfg.dcfl.q) == (12, 10)

    def test_q_exceeding_k_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"k": 16, "q": 20})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            config_from_mapping({"kq": 3})

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"g": "strong"})

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('k = 12\nq = 8\nclasses = ["ship", "plane"]\n')
        cfg = load_config(path)
        assert cfg.dcfl.k == 12 and cfg.classes == ("ship", "plane")

    def test_empty_file_defaults(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("")
        cfg = load_config(path)
        assert (cfg.dcfl.k, cfg.dcfl.q, cfg.dcfl.g, cfg.dcfl.w1, cfg.dcfl.alpha) == (
            16,
            12,
            0.8,
            0.7,
            0.5,
        )

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("k = = 3\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestOffsetsIo:
    def test_binary_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        field = OffsetField(rng.normal(size=(17, 9, 2)))
        path = tmp_path / "offsets.bin"
        write_offsets(path, field, fmt="binary")
        back = read_offsets(path)
        assert back.offsets.shape == (17, 9, 2)
        np.testing.assert_allclose(back.offsets, field.offsets, atol=1e-6)

    def test_json_roundtrip(self, tmp_path):
        field = OffsetField(np.ones((3, 1, 2)))
        path = tmp_path / "offsets.json"
        write_offsets(path, field, fmt="json")
        np.testing.assert_array_equal(read_offsets(path).offsets, field.offsets)

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "offsets.bin"
        write_offsets(path, OffsetField(np.ones((3, 2, 2))), fmt="binary")
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(ParseError):
            read_offsets(path)


class TestPredictionIo:
    def test_roundtrip(self, tmp_path):
        from dcfl.priorfield import build_prior_field
        from dcfl.assign import uniform_predictions

        field = build_prior_field(32, 32, strides=(8,), scale_factor=4)
        preds = {"scene.txt": uniform_predictions(field, 3)}
        path = tmp_path / "preds.json"
        write_prediction_fields(path, preds)
        back = read_prediction_fields(path)
        np.testing.assert_array_equal(back["scene.txt"].scores, preds["scene.txt"].scores)
        np.testing.assert_array_equal(back["scene.txt"].boxes, preds["scene.txt"].boxes)


class TestDetectionsJsonl:
    def test_roundtrip(self):
        dets = [
            Detection(OBox(10, 20, 4, 2, 0.3), 3, 0.75, "img1"),
            Detection(OBox(5, 5, 10, 10, -0.5), 0, 0.25, "img2"),
        ]
        text = serialize_detections_jsonl(dets)
        back = parse_detections_jsonl(text)
        assert back == dets

    def test_unknown_class(self):
        line = '{"image_id": "a", "class": "dragon", "confidence": 0.5, "box": [0, 0, 1, 1, 0]}'
        with pytest.raises(ParseError, match="dragon"):
            parse_detections_jsonl(line)

    def test_bad_json_line_number(self):
        good = '{"image_id": "a", "class": "ship", "confidence": 0.5, "box": [0, 0, 1, 1, 0]}'
        with pytest.raises(ParseError, match="line 2"):
            parse_detections_jsonl(good + "\nnot json\n")
