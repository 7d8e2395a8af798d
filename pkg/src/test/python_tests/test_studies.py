# Licensed under the MIT License.
"""
Tests for study configs, thresholds, runs and reports.
"""
import csv
import json

import numpy as np
import pytest
from hamcrest import assert_that, close_to, contains_string, equal_to, has_items, has_length, is_, none

import perfhom_studies as studies

from .perfhom_test_client import constants, defaults


def test_default_config_gets_study_thresholds():
    """Missing thresholds are filled in from the study defaults."""
    config = studies.structure_config({"study": "contrast", "thresholds": {"slope_min": 1.5}})

    assert_that(config.thresholds["slope_min"], close_to(1.5, 0.0))
    assert_that(config.thresholds["slope_max"], close_to(2.5, 0.0))
    assert_that(config.geometry.cell.holes[0].kind, equal_to("disk"))


@pytest.mark.parametrize(
    "data",
    [
        {"study": "magic"},
        {"study": "cell", "deltas": [0.5, 1.5]},
        {"study": "cell", "epsilons": [0.3]},
        {"study": "cell", "epsilons": [0.125, 0.25]},
        {"study": "cell", "h_ratio": 2},
        {"study": "cell", "thresholds": {"slope": 1.0}},
        {"study": "cell", "data": "cosine"},
        {"study": "contrast", "deltas": [0.0, 0.5, 1.0]},
        {"study": "cell", "tol": "tight"},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(studies.ConfigError):
        studies.structure_config(data)


def test_rate_study_needs_three_epsilons():
    """The expansion study fits a rate in epsilon and rejects two values."""
    with pytest.raises(studies.ConfigError, match="3 epsilons"):
        studies.read_config(constants.TEST_DATA / "expansion_two_eps.json")


def test_evaluate_thresholds():
    """`_min` and `_max` keys compare in opposite directions; missing metrics fail."""
    criteria = studies.evaluate_thresholds({"slope": 2.0}, {"slope_min": 1.7, "slope_max": 2.5, "gap_max": 1.0})

    assert_that([c.name for c in criteria], equal_to(["gap_max", "slope_max", "slope_min"]))
    assert_that([c.passed for c in criteria], equal_to([False, True, True]))
    assert_that(criteria[0].measured, is_(none()))
    assert_that(criteria[2].comparison, equal_to(">="))


def test_spread_thresholds_fail_wide_values():
    """Spread criteria are upper bounds on the expansion and regularity studies."""
    expansion = studies.structure_config({"study": "expansion", "epsilons": [0.25, 0.125, 0.0625]})
    regularity = studies.structure_config({"study": "regularity", "epsilons": [0.25, 0.125, 0.0625]})

    assert_that(expansion.thresholds["slope_spread_max"], close_to(0.3, 0.0))
    assert_that(regularity.thresholds["energy_spread_max"], close_to(5.0, 0.0))
    assert_that(regularity.thresholds["caccioppoli_max"], close_to(100.0, 0.0))
    (criterion,) = studies.evaluate_thresholds({"slope_spread": 0.5}, {"slope_spread_max": 0.3})
    assert_that(criterion.passed, is_(False))


def test_quick_cell_study_passes(tmp_path):
    """The cell study on a coarse mesh meets its default criteria and writes a report."""
    config = studies.structure_config({**defaults.QUICK_CELL_STUDY, "out": str(tmp_path)})
    result = studies.run_study(config)

    assert_that(result.passed, is_(True))
    assert_that(result.study, equal_to("cell"))
    assert_that((tmp_path / "cell.csv").exists(), is_(True))
    assert_that((tmp_path / "cell.md").read_text(encoding="utf-8"), contains_string("Overall: PASS"))
    assert_that(result.provenance["mesh_sizes"], equal_to([0.125]))
    assert_that(result.provenance["libraries"], has_length(len(studies.LIBRARIES)))


def test_quick_cell_study_judges_energy_spread_and_trivial_correctors(tmp_path):
    """The vanishing delta = 1 corrector is left out of the spread; trivial correctors are zero."""
    config = studies.structure_config({**defaults.QUICK_CELL_STUDY, "out": str(tmp_path)})
    result = studies.run_study(config)
    criteria = {c.name: c for c in result.criteria}

    assert_that(list(criteria), has_items("energy_spread_max", "trivial_corrector_max"))
    assert_that(criteria["energy_spread_max"].passed, is_(True))
    assert_that(criteria["energy_spread_max"].measured, close_to(1.0, 1e-12))
    assert_that(criteria["trivial_corrector_max"].passed, is_(True))


def test_run_study_leaves_the_global_random_state_alone(tmp_path):
    np.random.seed(123)
    before = np.random.get_state()[1].copy()
    studies.run_study(studies.structure_config({**defaults.QUICK_CELL_STUDY, "out": str(tmp_path)}))

    assert_that(bool(np.array_equal(np.random.get_state()[1], before)), is_(True))


def test_study_csv_is_deterministic(tmp_path):
    """Two runs of the same config write identical tables."""
    config = studies.structure_config(defaults.QUICK_CELL_STUDY)
    first = studies.write_csv(studies.run_study(config).rows, tmp_path / "first.csv")
    second = studies.write_csv(studies.run_study(config).rows, tmp_path / "second.csv")

    assert_that(first.read_text(encoding="utf-8"), equal_to(second.read_text(encoding="utf-8")))
    with first.open(encoding="utf-8") as stream:
        header = next(csv.reader(stream))
    assert_that(tuple(header), equal_to(studies.CSV_COLUMNS))


def test_report_round_trip(tmp_path):
    """JSON reports load back into the same results."""
    result = studies.run_study(studies.structure_config(defaults.QUICK_CELL_STUDY))
    written = studies.emit_report([result], tmp_path, stem="quick")

    assert_that([p.name for p in written], equal_to(["quick.csv", "quick.json", "quick.md"]))
    loaded = studies.load_results(tmp_path / "quick.json")
    assert_that(loaded, has_length(1))
    assert_that(loaded[0].rows, equal_to(result.rows))
    assert_that(loaded[0].criteria, equal_to(result.criteria))
    assert_that(loaded[0].passed, is_(True))
    assert_that(json.loads((tmp_path / "quick.json").read_text(encoding="utf-8"))[0]["passed"], is_(True))


def test_failed_criterion_is_reported(tmp_path):
    """An unreachable threshold fails the study without raising."""
    config = studies.read_config(constants.TEST_DATA / "failing_fem.json")
    result = studies.run_study(config)
    studies.emit_report([result], tmp_path)

    assert_that(result.passed, is_(False))
    assert_that((tmp_path / "results.md").read_text(encoding="utf-8"), contains_string("Overall: FAIL"))


def test_aborted_study_keeps_partial_rows(tmp_path):
    """A mesh failure mid-study raises StudyError after flushing the rows gathered so far."""
    config = studies.structure_config({**defaults.QUICK_CELL_STUDY, "cell_h": 0.2, "out": str(tmp_path)})

    with pytest.raises(studies.StudyError) as info:
        studies.run_study(config)

    assert_that(info.value.study, equal_to("cell"))
    partial = (tmp_path / "cell.partial.csv").read_text(encoding="utf-8").splitlines()
    assert_that(partial[0], equal_to(",".join(studies.CSV_COLUMNS)))
    assert_that(len(partial), equal_to(25))


def test_acceptance_suite_uses_default_thresholds():
    configs = studies.acceptance_configs()

    assert_that(configs, has_length(13))
    assert_that([c.study for c in configs], has_items("regularity", "cell", "expansion"))
    for config in configs:
        assert_that(studies.validate_config(config).thresholds, equal_to(studies.DEFAULT_THRESHOLDS[config.study]))


def test_suite_file_must_be_a_list(tmp_path):
    path = tmp_path / "suite.json"
    path.write_text(json.dumps(defaults.QUICK_CELL_STUDY), encoding="utf-8")

    with pytest.raises(studies.ConfigError):
        studies.read_suite(path)
