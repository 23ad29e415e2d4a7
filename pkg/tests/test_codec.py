import re

import numpy as np
import pytest

from handsynth.codec import (
    MAX_ISSUES,
    IssueKind,
    LabelParseError,
    RecordNotFoundError,
    encode_angles,
    format_angle,
    parse_angles,
    parse_angles_lenient,
    parse_angles_strict,
    read_record,
    record_paths,
    write_record,
)
from handsynth.kinematics import JointSpace, JointSpaceError, JointSpec, JointVector
from handsynth.renderer import Image
from handsynth.sampling import SeedSpec, sample_configuration

ELEMENT = re.compile(r"<([A-Za-z0-9_]+)>[^<]*</\1>")


def _random_vector(space, index):
    return sample_configuration(space, SeedSpec(77, index))


def _elements(text):
    return [m.group(0) for m in ELEMENT.finditer(text)]


class TestEncode:
    def test_single_zero(self):
        space = JointSpace((JointSpec("lh_WRJ2", "wrist", (0.0, 0.0, 1.0), 0.03, -1.0, 1.0),))
        assert encode_angles(space, JointVector([0.0])) == "<lh_WRJ2>0</lh_WRJ2>"

    @pytest.mark.parametrize(
        "value, text",
        [
            (0.0, "0"),
            (-0.0, "0"),
            (1e-7, "0"),
            (-1e-7, "0"),
            (0.5, "0.5"),
            (-0.25, "-0.25"),
            (1.5707963, "1.570796"),
            (2.0, "2"),
        ],
    )
    def test_format_angle(self, value, text):
        assert format_angle(value) == text

    def test_full_vector_tag_order(self, default_space):
        text = encode_angles(default_space, _random_vector(default_space, 0))
        assert text.startswith("<lh_WRJ2>")
        assert text.endswith("</lh_THJ1>")
        assert [ELEMENT.match(e).group(1) for e in _elements(text)] == list(default_space.names)
        assert not any(c.isspace() for c in text)

    def test_length_mismatch(self, default_space):
        with pytest.raises(JointSpaceError):
            encode_angles(default_space, JointVector([0.0, 1.0]))

    def test_round_trip(self, default_space):
        for index in range(10_000):
            q = _random_vector(default_space, index)
            text = encode_angles(default_space, q)
            report = parse_angles_strict(default_space, text)
            assert report.issues == []
            assert np.max(np.abs(report.vector.angles - q.angles)) <= 1e-6
            assert encode_angles(default_space, report.vector) == text


class TestParseStrict:
    def test_reordered_tags(self, default_space):
        elements = _elements(encode_angles(default_space, _random_vector(default_space, 1)))
        elements[0], elements[1] = elements[1], elements[0]
        report = parse_angles_strict(default_space, "".join(elements))
        assert report.vector is None
        first = report.issues[0]
        assert first.kind is IssueKind.OUT_OF_ORDER
        assert first.joint == "lh_WRJ1"
        assert first.position == 0

    def test_malformed_number_offset(self, default_space):
        elements = _elements(encode_angles(default_space, _random_vector(default_space, 2)))
        elements[0] = "<lh_WRJ2>abc</lh_WRJ2>"
        report = parse_angles_strict(default_space, "".join(elements))
        assert report.vector is None
        assert [(i.kind, i.joint, i.position) for i in report.issues] == [
            (IssueKind.MALFORMED_NUMBER, "lh_WRJ2", len("<lh_WRJ2>"))
        ]

    def test_scientific_notation(self, single_joint_space):
        report = parse_angles_strict(single_joint_space, "<lh_WRJ2>1.5e-3</lh_WRJ2>")
        assert report.vector.angles[0] == pytest.approx(0.0015)

    def test_whitespace_rejected(self, default_space):
        text = encode_angles(default_space, _random_vector(default_space, 3))
        report = parse_angles_strict(default_space, text.replace("><", ">\n<", 1))
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.UNEXPECTED_TEXT

    def test_mismatched_close(self, single_joint_space):
        report = parse_angles_strict(single_joint_space, "<lh_WRJ2>0.1</lh_WRJ1>")
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.MISMATCHED_CLOSE

    def test_missing_tag(self, default_space):
        elements = _elements(encode_angles(default_space, _random_vector(default_space, 4)))
        report = parse_angles_strict(default_space, "".join(elements[:-1]))
        assert report.vector is None
        assert [(i.kind, i.joint) for i in report.issues] == [(IssueKind.MISSING_TAG, "lh_THJ1")]

    def test_out_of_range(self, single_joint_space):
        report = parse_angles_strict(single_joint_space, "<lh_WRJ2>9</lh_WRJ2>")
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.OUT_OF_RANGE

    def test_unknown_tag(self, single_joint_space):
        report = parse_angles_strict(single_joint_space, "<lh_WRJ2>0</lh_WRJ2><extra>1</extra>")
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.UNKNOWN_TAG

    def test_duplicate_tag(self, single_joint_space):
        report = parse_angles_strict(single_joint_space, "<lh_WRJ2>0</lh_WRJ2><lh_WRJ2>1</lh_WRJ2>")
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.DUPLICATE_TAG

    def test_empty_text(self, single_joint_space):
        report = parse_angles_strict(single_joint_space, "")
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.MISSING_TAG

    def test_unknown_mode(self, single_joint_space):
        with pytest.raises(ValueError):
            parse_angles(single_joint_space, "", mode="fuzzy")


class TestParseLenient:
    def test_newlines_between_elements(self, default_space):
        text = encode_angles(default_space, _random_vector(default_space, 5))
        strict = parse_angles_strict(default_space, text)
        lenient = parse_angles_lenient(default_space, text.replace("><", ">\n<"))
        assert not lenient.fatal
        assert np.array_equal(lenient.vector.angles, strict.vector.angles)

    def test_shuffled_with_whitespace(self, default_space):
        rng = np.random.default_rng(99)
        q = _random_vector(default_space, 6)
        strict = parse_angles_strict(default_space, encode_angles(default_space, q))
        elements = _elements(encode_angles(default_space, q))
        fillers = [" ", "\n", "\t", "  \n ", ""]
        for _ in range(1000):
            order = rng.permutation(len(elements))
            pieces = []
            for k in order:
                pieces.append(fillers[rng.integers(len(fillers))])
                pieces.append(elements[k].replace(">", "> ", 1))
            report = parse_angles_lenient(default_space, "".join(pieces))
            assert not report.fatal
            assert np.array_equal(report.vector.angles, strict.vector.angles)

    def test_surrounding_text(self, single_joint_space):
        report = parse_angles_lenient(
            single_joint_space, "Sure! Here are the angles: < lh_WRJ2 > 0.25 </ lh_WRJ2 > done."
        )
        assert report.issues == []
        assert report.vector.angles[0] == 0.25

    def test_missing_tag_is_fatal(self, default_space):
        elements = _elements(encode_angles(default_space, _random_vector(default_space, 7)))
        del elements[10]
        report = parse_angles_lenient(default_space, "".join(elements))
        assert report.vector is None
        missing = [i for i in report.issues if i.kind is IssueKind.MISSING_TAG]
        assert [(i.joint, i.fatal) for i in missing] == [(default_space.names[10], True)]

    def test_duplicate_tag_is_fatal(self, single_joint_space):
        report = parse_angles_lenient(single_joint_space, "<lh_WRJ2>0</lh_WRJ2> <lh_WRJ2>0</lh_WRJ2>")
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.DUPLICATE_TAG

    def test_unknown_tag_is_warning(self, single_joint_space):
        report = parse_angles_lenient(single_joint_space, "<note>hi</note><lh_WRJ2>0.5</lh_WRJ2>")
        assert report.vector.angles[0] == 0.5
        assert [(i.kind, i.fatal) for i in report.issues] == [(IssueKind.UNKNOWN_TAG, False)]

    @pytest.mark.parametrize(
        "text",
        [
            "Answer:<br><lh_WRJ2>0.5</lh_WRJ2>",
            "<lh_WRJ2>0.5</lh_WRJ2><br>",
            "<p>pose: <lh_WRJ2>0.5</lh_WRJ2></p>",
        ],
    )
    def test_unclosed_unknown_tag_is_warning(self, single_joint_space, text):
        report = parse_angles_lenient(single_joint_space, text)
        assert report.vector.angles.tolist() == [0.5]
        assert not report.fatal
        assert {i.kind for i in report.issues} <= {IssueKind.UNKNOWN_TAG, IssueKind.MISMATCHED_CLOSE}

    def test_unclosed_joint_before_next_tag_is_fatal(self, default_space):
        text = "<lh_WRJ2>0.1<lh_WRJ1>0.2</lh_WRJ1>"
        report = parse_angles_lenient(default_space, text)
        assert report.vector is None
        assert (IssueKind.MISMATCHED_CLOSE, "lh_WRJ2", True) in {
            (i.kind, i.joint, i.fatal) for i in report.issues
        }

    def test_out_of_range_clamped(self, single_joint_space):
        report = parse_angles_lenient(single_joint_space, "<lh_WRJ2>9.5</lh_WRJ2>")
        assert report.vector.angles[0] == 3.2
        assert [(i.kind, i.fatal) for i in report.issues] == [(IssueKind.OUT_OF_RANGE, False)]

    def test_unclosed_is_fatal(self, single_joint_space):
        report = parse_angles_lenient(single_joint_space, "<lh_WRJ2>0.5")
        assert report.vector is None
        assert IssueKind.MISMATCHED_CLOSE in {i.kind for i in report.issues}

    def test_non_numeric_is_fatal(self, single_joint_space):
        report = parse_angles_lenient(single_joint_space, "<lh_WRJ2>zero</lh_WRJ2>")
        assert report.vector is None
        assert report.issues[0].kind is IssueKind.MALFORMED_NUMBER

    def test_accepts_everything_strict_accepts(self, default_space):
        for index in range(200):
            text = encode_angles(default_space, _random_vector(default_space, index))
            strict = parse_angles_strict(default_space, text)
            lenient = parse_angles_lenient(default_space, text)
            assert lenient.issues == []
            assert np.array_equal(lenient.vector.angles, strict.vector.angles)


class TestAdversarialInput:
    @pytest.mark.parametrize("mode", ["strict", "lenient"])
    def test_random_bytes(self, default_space, mode):
        noise = np.random.default_rng(5).integers(0, 256, size=1 << 20, dtype=np.uint8)
        report = parse_angles(default_space, noise.tobytes().decode("latin-1"), mode)
        assert report.vector is None
        assert len(report.issues) <= MAX_ISSUES

    @pytest.mark.parametrize("mode", ["strict", "lenient"])
    @pytest.mark.parametrize(
        "text",
        [
            "<lh_WRJ2>" * 100_000,
            "<" + " " * (1 << 20),
            "</lh_WRJ2>" * 100_000,
            "<a>1</a>" * 100_000,
        ],
    )
    def test_pathological_repetition(self, default_space, mode, text):
        report = parse_angles(default_space, text, mode)
        assert report.vector is None
        assert len(report.issues) <= MAX_ISSUES
        if len(report.issues) == MAX_ISSUES:
            assert report.dropped_issues > 0


class TestRecords:
    def test_file_names(self, tmp_path):
        image_path, label_path = record_paths(tmp_path, 123)
        assert image_path.name == "00000123.png"
        assert label_path.name == "00000123.txt"
        assert image_path.parent.name == "images"
        assert label_path.parent.name == "labels"

    def test_write_then_read(self, default_space, tmp_path):
        pixels = np.random.default_rng(0).integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
        image = Image(5, 6, pixels)
        q = _random_vector(default_space, 8)
        text = encode_angles(default_space, q)
        written = write_record(tmp_path, 0, image, text)
        image_path, label_path = record_paths(tmp_path, 0)
        assert written == image_path.stat().st_size + label_path.stat().st_size
        assert label_path.read_text(encoding="utf8") == text + "\n"

        loaded_image, loaded_q = read_record(tmp_path, 0, default_space)
        assert loaded_image.buffer == image.buffer
        assert np.max(np.abs(loaded_q.angles - q.angles)) <= 1e-6

    def test_missing_record_names_both_paths(self, default_space, tmp_path):
        with pytest.raises(RecordNotFoundError) as excinfo:
            read_record(tmp_path, 4, default_space)
        message = str(excinfo.value)
        assert "00000004.png" in message
        assert "00000004.txt" in message

    def test_corrupt_label(self, default_space, tmp_path):
        write_record(tmp_path, 1, Image.blank(2, 2), "<lh_WRJ2>0</lh_WRJ2>")
        with pytest.raises(LabelParseError, match="missing_tag"):
            read_record(tmp_path, 1, default_space)
