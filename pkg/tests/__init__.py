# Marks tests/ as a package so pytest resolves the shared conftest fixtures.
