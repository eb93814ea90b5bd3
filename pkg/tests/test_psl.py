"""Tests for PSL parsing and registrable-domain computation."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from itpsim import psl
from psl_vectors import CONFORMANCE_VECTORS

RULES = psl.embedded_rules()


@pytest.mark.parametrize("host,expected", CONFORMANCE_VECTORS, ids=lambda v: repr(v))
def test_registrable_domain_conformance(host, expected):
    if expected is None:
        with pytest.raises(psl.NoRegistrableDomain):
            psl.registrable_domain(host, RULES)
    else:
        assert psl.registrable_domain(host, RULES) == expected


def test_public_suffix_is_registrable_domain_minus_one_label():
    for host, expected in CONFORMANCE_VECTORS:
        if expected is None:
            continue
        suffix = psl.public_suffix(host, RULES)
        assert expected == expected.split(".", 1)[0] + "." + suffix


def test_parse_categorizes_rules():
    rules = psl.parse_rules("com\n*.ck\n!www.ck\n")
    assert len(rules.normal_rules) == 1
    assert len(rules.wildcard_rules) == 1
    assert len(rules.exception_rules) == 1
    assert len(rules) == 3


def test_parse_ignores_comments_and_blank_lines():
    rules = psl.parse_rules("// header\n\n   \ncom\n// trailing\n")
    assert len(rules) == 1


def test_comment_only_input_yields_empty_rules_with_implicit_star():
    rules = psl.parse_rules("// nothing here\n")
    assert len(rules) == 0
    assert psl.registrable_domain("example.example", rules) == "example.example"
    with pytest.raises(psl.NoRegistrableDomain):
        psl.registrable_domain("example", rules)


def test_section_markers_tag_rules():
    assert RULES.section_of("com") is psl.RuleSection.ICANN
    assert RULES.section_of("*.kobe.jp") is psl.RuleSection.ICANN
    assert RULES.section_of("!www.ck") is psl.RuleSection.ICANN
    assert RULES.section_of("uk.com") is psl.RuleSection.PRIVATE
    assert RULES.section_of("githubusercontent.com") is psl.RuleSection.PRIVATE
    assert RULES.section_of("nonexistent.zz") is None


def test_parse_rejects_embedded_whitespace():
    with pytest.raises(psl.PslParseError) as exc:
        psl.parse_rules("com\nco m\n")
    assert exc.value.line_no == 2


def test_parse_rejects_empty_label():
    with pytest.raises(psl.PslParseError) as exc:
        psl.parse_rules("// ok\ncom\na..b\n")
    assert exc.value.line_no == 3


def test_parse_rejects_bare_exception_marker():
    with pytest.raises(psl.PslParseError) as exc:
        psl.parse_rules("!\n")
    assert exc.value.line_no == 1


def test_parse_rejects_non_leading_wildcard():
    with pytest.raises(psl.PslParseError):
        psl.parse_rules("foo.*.bar\n")


def test_parse_rejects_cross_category_duplicate():
    with pytest.raises(psl.PslParseError) as exc:
        psl.parse_rules("com\n!com\n")
    assert exc.value.line_no == 2


def test_embedded_rules_parse_once_and_cover_both_sections():
    assert psl.embedded_rules() is RULES
    sections = set(RULES.normal_rules.values())
    assert {psl.RuleSection.ICANN, psl.RuleSection.PRIVATE} <= sections


def test_load_rules_matches_parse_rules(tmp_path):
    text = "com\nco.uk\n*.ck\n!www.ck\n"
    path = tmp_path / "rules.dat"
    path.write_text(text, encoding="utf-8")
    assert psl.load_rules(path) == psl.parse_rules(text)


LABEL = st.from_regex(r"[a-z][a-z0-9]{0,8}", fullmatch=True)
SUFFIXES = st.sampled_from(
    ["com", "co.uk", "biz", "ac.jp", "ide.kyoto.jp", "uk.com", "k12.ak.us", "zz.mm", "zz.ck"]
)
HOSTS = st.builds(
    lambda labels, suffix: ".".join(labels) + "." + suffix,
    st.lists(LABEL, min_size=1, max_size=3),
    SUFFIXES,
)


@given(HOSTS)
def test_registrable_domain_is_idempotent(host):
    rd = psl.registrable_domain(host, RULES)
    assert psl.registrable_domain(rd, RULES) == rd


@given(HOSTS)
def test_registrable_domain_is_a_dot_suffix_of_the_host(host):
    rd = psl.registrable_domain(host, RULES)
    assert host == rd or host.endswith("." + rd)
    assert rd.split(".", 1)[1] == psl.public_suffix(host, RULES)


@given(HOSTS)
def test_registrable_domain_ignores_case(host):
    assert psl.registrable_domain(host.upper(), RULES) == psl.registrable_domain(host, RULES)


@given(st.lists(LABEL, min_size=1, max_size=2))
def test_exception_rule_beats_wildcard(labels):
    host = ".".join(labels) + ".city.kobe.jp"
    assert psl.registrable_domain(host, RULES) == "city.kobe.jp"
    host = ".".join(labels) + ".www.ck"
    assert psl.registrable_domain(host, RULES) == "www.ck"
