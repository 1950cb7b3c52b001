import pytest

from libminer.expr import parse_expr
from libminer.platform import default_platform
from libminer.rules import default_rules


@pytest.fixture(scope="session")
def plat():
    return default_platform()


@pytest.fixture(scope="session")
def rules():
    return default_rules()


@pytest.fixture(scope="session")
def parse(plat):
    table = plat.op_table()
    return lambda src: parse_expr(src, table)
