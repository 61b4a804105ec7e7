def pytest_runtest_logreport(report):
    """One explicit PASS/FAIL/SKIP line per acceptance criterion."""
    if "test_acceptance" not in report.nodeid:
        return
    final = report.when == "call" or (report.when == "setup" and report.skipped)
    if not final:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    print(f"\nACCEPTANCE {name}: {status}", flush=True)
