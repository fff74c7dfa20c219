def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: desk-scale acceptance criteria (builds the full pipeline once)"
    )
