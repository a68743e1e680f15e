import math

from hypothesis import given, strategies as st

from tieredvm.runtime import fmt_number
from tieredvm.vm import run_source


def out(src):
    return run_source(src, tiering=False, threshold=None)[0]


def test_print_separates_with_tabs():
    assert out("print(1, 'a', nil, true)") == "1\ta\tnil\ttrue\n"
    assert out("print()") == "\n"


def test_number_formatting():
    assert out("print(1, 1.5, 1e100, 1/0, -1/0, 100000000000000)") == \
        "1\t1.5\t1e+100\tinf\t-inf\t100000000000000\n"


def test_tonumber():
    assert out("print(tonumber('12'), tonumber('0x10'), tonumber('z'), tonumber('  5  '))") == \
        "12\t16\tnil\t5\n"


def test_type_names():
    assert out("print(type(1), type('s'), type({}), type(print), type(nil), type(false))") == \
        "number\tstring\ttable\tfunction\tnil\tboolean\n"


def test_math_functions():
    assert out("print(math.floor(3.7), math.floor(-3.2), math.sqrt(16))") == "3\t-4\t4\n"


def test_select_forms():
    assert out("print(select('#', 1, 2), select(2, 'a', 'b'), select(-1, 'x', 'y'))") == \
        "2\tb\ty\n"


def test_tostring_and_concat():
    assert out("print(tostring(nil) .. tostring(true), 'a' .. 1 .. 2.5)") == "niltrue\ta12.5\n"


def test_clock_is_a_number():
    assert out("print(type(clock()))") == "number\n"


def test_bad_argument_errors():
    o = out("print(pcall(math.floor, 'x'))")
    assert o.startswith("false\t") and "floor" in o


@given(st.integers(-2 ** 53, 2 ** 53))
def test_integral_doubles_print_without_fraction(n):
    assert fmt_number(float(n)) == str(n)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_formatting_round_trips_at_14_digits(x):
    assert math.isclose(float(fmt_number(x)), x, rel_tol=1e-13)
