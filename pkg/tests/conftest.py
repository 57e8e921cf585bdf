import pytest

from curvesplat.synthetic import CameraSpec, ObjectSpec, SyntheticSceneSpec


def small_spec(**overrides) -> SyntheticSceneSpec:
    """Eight small frames; the object starts left of the view and enters
    it from frame 5 on."""
    d = dict(
        frames=8,
        ground_x=[-8.0, 8.0],
        ground_y=[3.0, 12.0],
        ground_spacing=1.0,
        objects=[ObjectSpec([[-20.0, 8.0, 0.85], [-40 / 3, 8.0, 0.85], [-20 / 3, 8.0, 0.85], [0.0, 8.0, 0.85]], spacing=0.6)],
        camera=CameraSpec(width=32, height=24, focal=24.0),
    )
    d.update(overrides)
    return SyntheticSceneSpec(**d)


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    from curvesplat.synthetic import generate

    root = tmp_path_factory.mktemp("small") / "ds"
    generate(small_spec(), str(root), seed=3)
    return root


ACCEPTANCE_LINES = []


def record(criterion: str, ok: bool, detail: str) -> None:
    """Log one acceptance line; the summary is printed at the end of the run."""
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
