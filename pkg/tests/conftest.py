from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

#: Filled by the acceptance suite: (number, passed, text).
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, text in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {text}")
