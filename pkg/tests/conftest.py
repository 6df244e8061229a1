import sys

# criterion lines recorded by test_acceptance, echoed after the run
ACCEPTANCE = {}


def record(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line, file=sys.__stdout__, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
