"""Mitigation matrix derivation and the command-line entry point."""

import json

import pytest

from itpsim.harness_cli import (
    ATTACK1_COLUMN,
    ATTACK3_COLUMN,
    CELL_FAILS,
    CELL_NOT_APPLICABLE,
    CELL_SUCCEEDS,
    JITTER,
    MANUAL_OFF,
    MATRIX_COLUMNS,
    MATRIX_JITTER,
    MATRIX_REFERER_CAP,
    MITIGATION_ROWS,
    REFERER_CAP,
    apply_mitigations,
    channel_applicable,
    load_bundled_scenario,
    main,
    resolve_scenario,
    row_name,
    run_mitigation_matrix,
)
from itpsim.itp_core import ItpConfig
from itpsim.probes import (
    ALL_CHANNELS,
    AUTH_RESOURCE,
    OVERLONG_REFERER,
    PLAINTEXT_OBSERVER,
    REDIRECT_COOKIE,
    REDIRECT_MANUAL,
    UPLOADED_REFERRER,
)
from itpsim.scenario import parse_scenario, run_setup
from itpsim.web_sim import SimConfigError

COMBINED = row_name((REFERER_CAP, MANUAL_OFF, JITTER))


def test_row_names():
    assert row_name(()) == "none"
    assert row_name((REFERER_CAP,)) == "referer-cap"
    assert COMBINED == "referer-cap+manual-redirect-off+threshold-jitter"
    assert len(MITIGATION_ROWS) == 8
    assert len({row_name(r) for r in MITIGATION_ROWS}) == 8


def test_apply_mitigations_builds_configs():
    base = ItpConfig()
    assert apply_mitigations(base, ()) == base
    capped = apply_mitigations(base, (REFERER_CAP,))
    assert capped.referer_length_cap == MATRIX_REFERER_CAP
    combined = apply_mitigations(base, (REFERER_CAP, MANUAL_OFF, JITTER))
    assert combined.referer_length_cap == MATRIX_REFERER_CAP
    assert combined.manual_redirect_enabled is False
    assert combined.threshold_jitter == MATRIX_JITTER
    assert base.manual_redirect_enabled is True  # inputs never mutated


# -- structural applicability ------------------------------------------------

APPLICABILITY = """\
scenario applicability
server full.example
resource full.example /asset.png public
resource full.example /me auth SESS
resource full.example /goto open-redirect
resource full.example /dash conditional-redirect SESS /login
resource full.example /login public
resource full.example /drop upload-echo
visit-cookie full.example SESS tok

server bare.example
server nocookie.example
resource nocookie.example /me auth SESS
resource nocookie.example /goto open-redirect
resource nocookie.example /dash conditional-redirect SESS /login

server wired.example scheme=http
resource wired.example /x public

server probe.example
actor attacker probe.example
actor victim full.example bare.example nocookie.example wired.example

navigate victim login https://full.example/
"""


@pytest.fixture(scope="module")
def applicability_view():
    scenario = parse_scenario(APPLICABILITY)
    _, view = run_setup(scenario, scenario.itp)
    return view


@pytest.mark.parametrize(
    "site,channel,expected",
    [
        ("full.example", OVERLONG_REFERER, True),
        ("full.example", AUTH_RESOURCE, True),
        ("full.example", REDIRECT_COOKIE, True),
        ("full.example", REDIRECT_MANUAL, True),
        ("full.example", UPLOADED_REFERRER, True),
        ("full.example", PLAINTEXT_OBSERVER, False),  # https only
        ("bare.example", OVERLONG_REFERER, False),  # nothing loadable
        ("bare.example", AUTH_RESOURCE, False),
        ("bare.example", UPLOADED_REFERRER, False),
        # endpoints exist but the jar never got the cookie
        ("nocookie.example", AUTH_RESOURCE, False),
        ("nocookie.example", REDIRECT_COOKIE, False),
        ("nocookie.example", REDIRECT_MANUAL, False),
        ("wired.example", PLAINTEXT_OBSERVER, True),
        ("wired.example", OVERLONG_REFERER, True),
    ],
)
def test_channel_applicable(applicability_view, site, channel, expected):
    assert channel_applicable(applicability_view, site, channel) is expected


def test_channel_applicable_rejects_unknown_channel(applicability_view):
    with pytest.raises(ValueError):
        channel_applicable(applicability_view, "full.example", "tea-leaves")


# -- the bundled matrix scenario ---------------------------------------------


@pytest.fixture(scope="module")
def matrix_report():
    return run_mitigation_matrix(load_bundled_scenario("matrix-base"))


def test_matrix_shape(matrix_report):
    assert matrix_report.columns == MATRIX_COLUMNS
    assert [row["mitigations"] for row in matrix_report.rows] == [
        row_name(r) for r in MITIGATION_ROWS
    ]
    for row in matrix_report.rows:
        assert set(row["cells"]) == set(MATRIX_COLUMNS)


def test_matrix_cells_all_derived_applicable(matrix_report):
    # matrix-base gives every channel its prerequisites, so no cell may
    # fall back to NotApplicable; breakage must be measured, not assumed
    for row in matrix_report.rows:
        assert CELL_NOT_APPLICABLE not in row["cells"].values()


def test_matrix_unmitigated_row_all_succeed(matrix_report):
    cells = matrix_report.rows[0]["cells"]
    assert matrix_report.rows[0]["mitigations"] == "none"
    assert all(cell == CELL_SUCCEEDS for cell in cells.values())


def test_matrix_referer_cap_breaks_only_overlong(matrix_report):
    cells = {c: matrix_report.cell("referer-cap", c) for c in MATRIX_COLUMNS}
    assert cells[OVERLONG_REFERER] == CELL_FAILS
    for column in MATRIX_COLUMNS:
        if column != OVERLONG_REFERER:
            assert cells[column] == CELL_SUCCEEDS, column


def test_matrix_manual_off_breaks_only_redirect_manual(matrix_report):
    for column in MATRIX_COLUMNS:
        want = CELL_FAILS if column == REDIRECT_MANUAL else CELL_SUCCEEDS
        assert matrix_report.cell("manual-redirect-off", column) == want, column


def test_matrix_jitter_alone_breaks_nothing(matrix_report):
    for column in MATRIX_COLUMNS:
        assert matrix_report.cell("threshold-jitter", column) == CELL_SUCCEEDS, column


def test_matrix_combined_row_leaves_survivors(matrix_report):
    cells = {c: matrix_report.cell(COMBINED, c) for c in MATRIX_COLUMNS}
    assert cells[OVERLONG_REFERER] == CELL_FAILS
    assert cells[REDIRECT_MANUAL] == CELL_FAILS
    survivors = [c for c in ALL_CHANNELS if cells[c] == CELL_SUCCEEDS]
    assert survivors  # the list remains probeable
    assert cells[ATTACK1_COLUMN] == CELL_SUCCEEDS
    assert cells[ATTACK3_COLUMN] == CELL_SUCCEEDS


def test_matrix_claim_holds(matrix_report):
    assert matrix_report.claim_ok is True
    assert matrix_report.claim_notes == ()


def test_matrix_structured_output_stable(matrix_report):
    again = run_mitigation_matrix(load_bundled_scenario("matrix-base"))
    assert matrix_report.to_structured() == again.to_structured()
    payload = json.loads(matrix_report.to_structured())
    assert payload["claim_ok"] is True
    assert len(payload["rows"]) == 8


def test_matrix_text_table_lists_all_rows(matrix_report):
    text = matrix_report.to_text()
    for toggles in MITIGATION_ROWS:
        assert row_name(toggles) in text
    assert "claim: holds" in text


def test_matrix_requires_declared_parameters():
    scenario = parse_scenario("scenario nop\nserver a.example\nactor attacker a.example\n")
    with pytest.raises(SimConfigError, match="matrix origin"):
        run_mitigation_matrix(scenario)


# A stripped-down matrix world: the canaries expose only public paths
# over https, so every channel except the overlong-referer one lacks its
# prerequisites. Once the cap kills that channel nothing survives and
# the combined-row claim must be reported as violated, not papered over.
DEGENERATE = """\
scenario degenerate-matrix
seed 13
itp threshold 3

server probe.example
server on-c.example
resource on-c.example /x public
server off-c.example
resource off-c.example /x public
{fps}
{pins}

actor attacker probe.example on-c.example off-c.example {fp_names}
actor pins {pin_names}

matrix origin https://probe.example
matrix known-on on-c.example
matrix known-off off-c.example
matrix first-parties {fp_list}
matrix candidates on-c.example,off-c.example
matrix pins {pin_list}
"""


def degenerate_scenario():
    fps = [f"fp{i}.example" for i in range(8)]
    pins = [f"p{i}.pin-pool.example" for i in range(4)]
    text = DEGENERATE.format(
        fps="\n".join(f"server {h}" for h in fps),
        pins="\n".join(f"server {h}\nresource {h} /pin.gif public" for h in pins),
        fp_names=" ".join(fps),
        pin_names=" ".join(pins),
        fp_list=",".join(fps),
        pin_list=",".join(pins),
    )
    return parse_scenario(text)


def test_degenerate_matrix_reports_violated_claim():
    report = run_mitigation_matrix(degenerate_scenario())
    none_row = {c: report.cell("none", c) for c in MATRIX_COLUMNS}
    assert none_row[OVERLONG_REFERER] == CELL_SUCCEEDS
    assert none_row[AUTH_RESOURCE] == CELL_NOT_APPLICABLE
    assert none_row[REDIRECT_COOKIE] == CELL_NOT_APPLICABLE
    assert none_row[REDIRECT_MANUAL] == CELL_NOT_APPLICABLE
    assert none_row[UPLOADED_REFERRER] == CELL_NOT_APPLICABLE
    assert none_row[PLAINTEXT_OBSERVER] == CELL_NOT_APPLICABLE
    assert none_row[ATTACK1_COLUMN] == CELL_SUCCEEDS
    assert none_row[ATTACK3_COLUMN] == CELL_SUCCEEDS

    combined_row = {c: report.cell(COMBINED, c) for c in MATRIX_COLUMNS}
    assert combined_row[OVERLONG_REFERER] == CELL_FAILS
    assert combined_row[ATTACK1_COLUMN] == CELL_FAILS
    assert combined_row[ATTACK3_COLUMN] == CELL_FAILS

    assert report.claim_ok is False
    assert any("surviving channel" in note for note in report.claim_notes)
    assert "claim: VIOLATED" in report.to_text()


# -- command line --------------------------------------------------------------


def test_cli_run_ok(capsys):
    assert main(["run", "listing-2-3"]) == 0
    out = capsys.readouterr().out
    assert "scenario listing-2-3" in out
    assert "result: all expectations hold" in out


def test_cli_run_structured(capsys):
    assert main(["run", "attack-2-count-strikes", "--format", "structured"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ok"] is True
    assert payload["scenario"] == "attack-2-count-strikes"


def test_cli_run_failing_expectation_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.scn"
    path.write_text(
        "server a.example\nactor attacker a.example\nexpect-prevalent a.example true\n"
    )
    assert main(["run", str(path)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_unknown_scenario_exits_2(capsys):
    assert main(["run", "no-such-thing"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("itpsim:")
    assert "listing-2-3" in err  # the bundled names are suggested


def test_cli_parse_error_exits_2_with_line(tmp_path, capsys):
    path = tmp_path / "broken.scn"
    path.write_text("server a.example\nwat 1\n")
    assert main(["run", str(path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_cli_state_text(capsys):
    assert main(["state", "attack-4-sso"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("session: main")
    assert "sso.example: prevalent" in out


def test_cli_state_structured(capsys):
    assert main(["state", "psl-subdomains", "--format", "structured"]) == 0
    payload = json.loads(capsys.readouterr().out)
    domains = {d["domain"]: d for d in payload["domains"]}
    assert domains["fixed.example"]["prevalent"] is True
    assert domains["t0.tracker-pool.example"]["strikes"] == 1


def test_cli_matrix_structured(capsys):
    assert main(["matrix", "matrix-base", "--format", "structured"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["claim_ok"] is True


def test_cli_seed_override(capsys):
    assert main(["run", "listing-2-3", "--seed", "123", "--format", "structured"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 123


def test_cli_psl_override(tmp_path, capsys):
    # a rules file without the pin-pool suffix collapses subdomain strikes
    rules = tmp_path / "tiny.dat"
    rules.write_text("example\n")
    assert main(["run", "psl-subdomains", "--psl", str(rules)]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out


def test_resolve_scenario_accepts_paths_names_and_suffixes(tmp_path):
    assert resolve_scenario("listing-2-3").name == "listing-2-3"
    assert resolve_scenario("listing-2-3.scn").name == "listing-2-3"
    path = tmp_path / "mine.scn"
    path.write_text("scenario mine\nserver a.example\nactor attacker a.example\n")
    assert resolve_scenario(str(path)).name == "mine"
    with pytest.raises(FileNotFoundError):
        resolve_scenario("never-heard-of-it")
