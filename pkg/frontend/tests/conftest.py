def pytest_runtest_logreport(report):
    """Visible pass/fail line for the figures acceptance criterion."""
    if report.when != "call" or "test_render" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if name.startswith("test_criterion"):
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {verdict}", flush=True)
