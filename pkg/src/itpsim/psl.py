"""Public Suffix List rules and registrable-domain (eTLD+1) computation.

All tracking-prevention state in this simulator is keyed by registrable
domain: the public suffix of a hostname plus one more label.  This module
parses the PSL text format (one rule per line, ``//`` comments, ``*.``
wildcard rules, ``!`` exception rules) and implements the canonical
matching algorithm:

- the longest matching rule wins,
- an exception rule beats any wildcard rule it punches a hole in,
- hosts matched by no explicit rule fall to the implicit prevailing
  rule ``*`` (their top label is treated as the public suffix).

Registrable domains are represented as plain lowercase dotted strings;
comparison is exact label equality after ASCII lowercasing.  Hosts must be
provided pre-punycoded: this module is byte-oriented and does no IDNA
conversion.  IP-address literals are the caller's job to reject.

A small embedded rule snapshot ships with the package (see
:func:`embedded_rules`); the full canonical file can be loaded from disk
with :func:`load_rules`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

# Semantic alias: a registrable domain is a lowercase dotted ASCII string.
RegistrableDomain = str

_BEGIN_ICANN = "===BEGIN ICANN DOMAINS==="
_BEGIN_PRIVATE = "===BEGIN PRIVATE DOMAINS==="


class RuleSection(enum.Enum):
    """Which section of the list a rule came from.

    Preserved for reporting; matching never consults it.  Presence on the
    list is what matters for subdomain-isolation behavior, not section.
    """

    ICANN = "icann"
    PRIVATE = "private"


class PslParseError(ValueError):
    """Raised for a malformed rule line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NoRegistrableDomain(ValueError):
    """The host has no registrable domain (it is a public suffix, or too short)."""


@dataclass(frozen=True)
class PublicSuffixRuleSet:
    """Categorized PSL rules, immutable after parsing.

    Rules are stored as label tuples in dotted order ("co.uk" -> ("co",
    "uk")).  Exception rules are stored without their ``!`` marker.  Each
    mapping carries the section the rule appeared in.
    """

    normal_rules: dict[tuple[str, ...], RuleSection] = field(default_factory=dict)
    wildcard_rules: dict[tuple[str, ...], RuleSection] = field(default_factory=dict)
    exception_rules: dict[tuple[str, ...], RuleSection] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.normal_rules) + len(self.wildcard_rules) + len(self.exception_rules)

    def section_of(self, rule: str) -> RuleSection | None:
        """Look up the section of a rule given in text form (with markers)."""
        if rule.startswith("!"):
            return self.exception_rules.get(tuple(rule[1:].split(".")))
        labels = tuple(rule.split("."))
        if "*" in labels:
            return self.wildcard_rules.get(labels)
        return self.normal_rules.get(labels)


def _split_rule(line: str, line_no: int) -> tuple[str, ...]:
    if any(c.isspace() for c in line):
        raise PslParseError(line_no, f"embedded whitespace in rule {line!r}")
    labels = tuple(line.lower().split("."))
    if any(label == "" for label in labels):
        raise PslParseError(line_no, f"empty label in rule {line!r}")
    if "*" in labels[1:]:
        raise PslParseError(line_no, f"wildcard label only allowed in leading position: {line!r}")
    return labels


def parse_rules(text: str) -> PublicSuffixRuleSet:
    """Parse PSL text into a categorized rule set.

    Blank lines and ``//`` comments are ignored; the ICANN/PRIVATE section
    markers in comments tag the rules that follow.  Comment-only input
    yields an empty rule set (the implicit prevailing ``*`` rule still
    applies during matching).

    Raises :class:`PslParseError` (naming the line) for rules with embedded
    whitespace, empty labels, a bare ``!``, or a non-leading wildcard.
    """
    normal: dict[tuple[str, ...], RuleSection] = {}
    wildcard: dict[tuple[str, ...], RuleSection] = {}
    exception: dict[tuple[str, ...], RuleSection] = {}
    section = RuleSection.ICANN

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("//"):
            if _BEGIN_PRIVATE in line:
                section = RuleSection.PRIVATE
            elif _BEGIN_ICANN in line:
                section = RuleSection.ICANN
            continue
        if line.startswith("!"):
            body = line[1:]
            if not body:
                raise PslParseError(line_no, "exception marker with no rule")
            labels = _split_rule(body, line_no)
            target = exception
        else:
            labels = _split_rule(line, line_no)
            target = wildcard if labels[0] == "*" else normal
        for other in (normal, wildcard, exception):
            if other is not target and labels in other:
                raise PslParseError(line_no, f"rule {line!r} already present in another category")
        target[labels] = section

    return PublicSuffixRuleSet(normal, wildcard, exception)


def load_rules(path) -> PublicSuffixRuleSet:
    """Parse a PSL file from disk (e.g. the canonical public_suffix_list.dat)."""
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


@lru_cache(maxsize=1)
def embedded_rules() -> PublicSuffixRuleSet:
    """The rule snapshot bundled with the package, parsed once."""
    text = resources.files("itpsim.data").joinpath("embedded_psl.dat").read_text("utf-8")
    return parse_rules(text)


def _suffix_length(labels: tuple[str, ...], rules: PublicSuffixRuleSet) -> int:
    """Number of trailing labels forming the public suffix of ``labels``."""
    # An exception rule prevails over every other match; its public suffix
    # is the rule minus its leftmost label.
    for i in range(len(labels)):
        if labels[i:] in rules.exception_rules:
            return len(labels) - i - 1
    # Otherwise the longest explicit match wins; scanning from the left
    # visits longer tails first.
    for i in range(len(labels)):
        tail = labels[i:]
        if tail in rules.normal_rules or ("*",) + tail[1:] in rules.wildcard_rules:
            return len(tail)
    return 1  # implicit prevailing rule "*"


def public_suffix(host: str, rules: PublicSuffixRuleSet) -> str:
    """The public suffix of ``host`` under ``rules`` (lowercased)."""
    labels = _host_labels(host)
    return ".".join(labels[len(labels) - _suffix_length(labels, rules):])


def registrable_domain(host: str, rules: PublicSuffixRuleSet) -> RegistrableDomain:
    """Compute the registrable domain (public suffix plus one label) of ``host``.

    Raises :class:`NoRegistrableDomain` when the host itself is a public
    suffix or has too few labels (including empty hosts and hosts with
    empty labels, such as a leading dot).
    """
    labels = _host_labels(host)
    suffix_len = _suffix_length(labels, rules)
    if len(labels) <= suffix_len:
        raise NoRegistrableDomain(f"{host!r} is a public suffix or shorter")
    return ".".join(labels[len(labels) - suffix_len - 1:])


def _host_labels(host: str) -> tuple[str, ...]:
    host = host.lower()
    labels = tuple(host.split("."))
    if not host or any(label == "" for label in labels):
        raise NoRegistrableDomain(f"not a dotted hostname: {host!r}")
    return labels
