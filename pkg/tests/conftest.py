import pytest

ACCEPTANCE = pytest.StashKey[dict]()

TITLES = {
    1: "corrected-estimator identity",
    2: "linear bias formulas recovered",
    3: "log-linear limits recovered",
    4: "correction at lambda* recovers beta1",
    5: "bias ordering",
    6: "corrected-variance formula",
    7: "detection size and power",
    8: "GLM core correctness",
    9: "simulation reproducibility",
}


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {"collected": False, "results": {}}


def pytest_collection_finish(session):
    # runs after deselection, so -k / --deselect are respected
    session.config.stash[ACCEPTANCE]["collected"] = any(
        item.module.__name__.endswith("test_acceptance") for item in session.items
    )


@pytest.fixture
def record_criterion(request):
    def record(number: int, ok: bool, detail: str) -> None:
        request.config.stash[ACCEPTANCE]["results"][number] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    state = config.stash[ACCEPTANCE]
    if not state["collected"]:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title in TITLES.items():
        ok, detail = state["results"].get(number, (False, "not evaluated"))
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}")
