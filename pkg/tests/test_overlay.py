import xml.etree.ElementTree as ET

import pytest

from conftest import INP, PRE, box
from formpair.errors import InvalidInputError
from formpair.io import Page
from formpair.overlay import render_overlay

NS = {"s": "http://www.w3.org/2000/svg"}
L = box("L", (0, 0, 80, 20), PRE)
V = box("V", (100, 0, 200, 20), INP)
W = box("W", (100, 40, 200, 60), INP)


def lines(svg, cls=None):
    root = ET.fromstring(svg.split("\n", 1)[1])
    found = root.findall(".//s:g[@class='relationships']/s:line", NS)
    return [ln for ln in found if cls is None or ln.get("class") == cls]


def test_empty_page_is_canvas_only():
    svg = render_overlay(Page("e", 300, 200, []), [])
    root = ET.fromstring(svg.split("\n", 1)[1])
    assert root.get("width") == "300" and root.get("height") == "200"
    assert root.findall(".//s:g[@class='boxes']/s:rect", NS) == []
    assert lines(svg) == []


def test_single_true_positive_is_one_green_line():
    page = Page("p", 300, 100, [L, V], [("L", "V")])
    found = lines(render_overlay(page, [("L", "V", 0.9)]))
    assert [(ln.get("class"), ln.get("stroke")) for ln in found] == [("tp", "green")]


def test_false_positive_and_missed():
    page = Page("p", 300, 100, [L, V, W], [("L", "V")])
    found = lines(render_overlay(page, [("L", "V", 0.2), ("L", "W", 0.9)]))
    assert sorted((ln.get("class"), ln.get("stroke")) for ln in found) == [("fn", "orange"), ("fp", "red")]


def test_pruned_correct_is_one_thin_yellow_line():
    page = Page("p", 300, 100, [L, V, W], [("L", "V")])
    svg = render_overlay(page, [("L", "V", 0.9), ("L", "W", -0.2)], accepted=[True, False], raw_scores=[0.9, 0.8])
    yellow = lines(svg, "pruned-correct")
    assert len(yellow) == 1 and yellow[0].get("stroke") == "yellow"
    assert float(yellow[0].get("stroke-width")) < float(lines(svg, "tp")[0].get("stroke-width"))
    assert len(lines(svg)) == 2


def test_pruned_incorrect_is_pink_not_orange():
    page = Page("p", 300, 100, [L, V], [("L", "V")])
    svg = render_overlay(page, [("L", "V", -0.1)], accepted=[False], raw_scores=[0.9])
    assert [ln.get("stroke") for ln in lines(svg)] == ["pink"]


def test_box_colors():
    svg = render_overlay(Page("p", 300, 100, [L, V]), [])
    root = ET.fromstring(svg.split("\n", 1)[1])
    colors = {r.get("id"): r.get("stroke") for r in root.findall(".//s:g[@class='boxes']/s:rect", NS)}
    assert colors == {"box-L": "blue", "box-V": "cyan"}


def test_dangling_id_rejected():
    with pytest.raises(InvalidInputError):
        render_overlay(Page("p", 300, 100, [L]), [("L", "ghost", 0.9)])


def test_deterministic_and_order_independent():
    page = Page("p", 300, 100, [W, V, L], [("L", "V")])
    a = render_overlay(page, [("L", "W", 0.9), ("L", "V", 0.9)])
    page2 = Page("p", 300, 100, [L, V, W], [("L", "V")])
    b = render_overlay(page2, [("L", "V", 0.9), ("L", "W", 0.9)])
    assert a == b
    assert a.startswith('<?xml version="1.0" encoding="UTF-8"?>')


def test_background_is_referenced():
    svg = render_overlay(Page("p", 10, 10, []), [], background="scan.png")
    assert "scan.png" in svg
