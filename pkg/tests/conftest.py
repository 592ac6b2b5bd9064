import criteria


def pytest_terminal_summary(terminalreporter):
    if criteria.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in criteria.VERDICTS:
            terminalreporter.write_line(line)
