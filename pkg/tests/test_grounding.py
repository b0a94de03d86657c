"""Grounding-cue detection: confidence filter, box cap, pixel normalization."""
import pytest

from alignfeedback.clients import MockGrounding, NoDetection
from alignfeedback.core import PixelBox
from alignfeedback.grounding import ground_cues, ground_label

from conftest import FakeGrounding, make_image


IMG = make_image(width=640, height=480)


class TestGroundLabel:
    def test_single_box_normalized(self):
        backend = FakeGrounding([PixelBox(64, 48, 320, 240, 0.9)])
        visual = ground_label("red car", IMG, backend)
        assert len(visual.boxes) == 1
        assert visual.boxes[0].box.as_list() == [100, 100, 500, 500]
        assert visual.boxes[0].label == "red car"
        assert backend.calls == [(IMG.uri, "red car")]

    def test_low_confidence_filtered(self):
        backend = FakeGrounding([PixelBox(0, 0, 64, 48, 0.2),
                                 PixelBox(64, 48, 320, 240, 0.8)])
        visual = ground_label("cat", IMG, backend, min_conf=0.35)
        assert [lb.box.as_list() for lb in visual.boxes] == [[100, 100, 500, 500]]

    def test_all_below_threshold_is_no_detection(self):
        backend = FakeGrounding([PixelBox(0, 0, 64, 48, 0.1)])
        with pytest.raises(NoDetection):
            ground_label("cat", IMG, backend, min_conf=0.35)

    def test_max_boxes_keeps_highest_confidence(self):
        backend = FakeGrounding([PixelBox(0, 0, 64, 48, 0.5),
                                 PixelBox(64, 48, 320, 240, 0.9),
                                 PixelBox(320, 240, 640, 480, 0.7)])
        visual = ground_label("cat", IMG, backend, max_boxes=2)
        assert [lb.box.as_list() for lb in visual.boxes] == [
            [100, 100, 500, 500], [500, 500, 1000, 1000]]

    def test_backend_no_detection_propagates(self):
        backend = MockGrounding({})  # nothing scripted
        with pytest.raises(NoDetection):
            ground_label("cat", IMG, backend)


class TestGroundCues:
    def test_multiple_cues_concatenate_in_order(self):
        backend = FakeGrounding()
        visual = ground_cues(["two men", "a rail"], IMG, backend)
        assert [lb.label for lb in visual.boxes] == ["two men", "a rail"]
        assert backend.calls == [(IMG.uri, "two men"), (IMG.uri, "a rail")]

    def test_empty_cue_list_rejected(self):
        with pytest.raises(ValueError):
            ground_cues([], IMG, FakeGrounding())

    def test_any_cue_miss_raises(self):
        backend = MockGrounding({(IMG.uri, "hit"): [PixelBox(0, 0, 10, 10, 0.9)]})
        with pytest.raises(NoDetection):
            ground_cues(["hit", "miss"], IMG, backend)
