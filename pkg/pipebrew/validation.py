import math
from numbers import Real

from pipebrew.exceptions import ExceedsMaximumError, IntError, ValidationError


def is_integer(value: int) -> bool:
    """
    Determine if the given value is an integer.

    Booleans are rejected even though they subclass ``int``.

    :param value: The value to be checked.
    :type value: int
    :return: True if the value is an integer.
    :rtype: bool
    :raises: exceptions.IntError
    """
    if isinstance(value, int) and not isinstance(value, bool):
        return True
    else:
        raise IntError(
            f"Invalid input type. Expected 'int', got '{type(value).__name__}' instead."
        )


def is_number(value) -> bool:
    """
    Check that the value is a finite real number.

    :param value: The value to be checked.
    :return: True if the value is a finite int or float.
    :rtype: bool
    :raises ValidationError: If the value is not a finite real number.
    """
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ValidationError(
            f"Invalid input type. Expected a number, got '{type(value).__name__}' instead."
        )
    if not math.isfinite(value):
        raise ValidationError(f"Expected a finite number, got {value}.")
    return True


def is_positive(number) -> bool:
    """
    Check if a number is positive.

    :param number: The number to be checked.
    :return: True if the number is positive.
    :rtype: bool
    :raises: ValueError
    """
    if number > 0:
        return True
    else:
        raise ValueError(
            "The input must be a positive number. Please provide a valid positive number."
        )


def is_non_negative(number, name: str = "value") -> bool:
    """
    Check that a number is finite and not negative.

    :param number: The number to be checked.
    :param name: Field name used in the error message.
    :type name: str
    :return: True if ``number >= 0``.
    :rtype: bool
    :raises ValidationError: If the number is negative or not a number.
    """
    is_number(number)
    if number < 0:
        raise ValidationError(f"{name} must be non-negative, got {number}.")
    return True


def is_positive_integer(value) -> bool:
    """
    Check if the given value is a positive integer.

    Uses `is_integer()` and `is_positive()` and converts their errors into
    a `ValidationError`.

    :param value: The value to be checked. Can be of any type.
    :type value: Any
    :return: True if the value is a positive integer.
    :rtype: bool
    :raises: ValidationError
    """
    try:
        is_integer(value) and is_positive(value)
        return True
    except IntError as e:
        raise ValidationError(e)
    except ValueError as e:
        raise ValidationError(e)


def is_positive_number(value, name: str = "value") -> bool:
    """
    Check that the value is a finite number greater than zero.

    :raises ValidationError: If the value is not a positive number.
    """
    is_number(value)
    if value <= 0:
        raise ValidationError(f"{name} must be positive, got {value}.")
    return True


def validate_range(value: int, min: int, max: int, name: str = "value") -> bool:
    """
    Validates if a given integer falls within specified minimum and maximum bounds.

    :param value: The value to validate.
    :param min: The minimum acceptable value (inclusive).
    :param max: The maximum acceptable value (inclusive).
    :param name: Field name used in the error message.
    :raises ValidationError: If `value` is not within the specified range.
    """
    try:
        is_integer(value)
    except IntError as e:
        raise ValidationError(e)
    if min <= value <= max:
        return True
    else:
        raise ValidationError(
            f"Invalid {name}: {value}. "
            f"It must be between {min} (inclusive) and {max} (inclusive)."
        )


def is_less_than(a: int, b: int) -> bool:
    """
    Compare two integers and raise if the first is not strictly smaller.

    :param a: The integer to be compared.
    :type a: int
    :param b: The integer to compare against.
    :type b: int
    :returns: True if `a` is less than `b`.
    :rtype: bool
    :raises ExceedsMaximumError: If `a` is greater than or equal to `b`.
    """
    if a >= b:
        raise ExceedsMaximumError(f"Value {a} exceeds the maximum permitted value {b}.")
    return True


def is_less_or_equal(a: int, b: int) -> bool:
    """
    :raises ExceedsMaximumError: If `a` is greater than `b`.
    """
    if a > b:
        raise ExceedsMaximumError(f"Value {a} exceeds the maximum permitted value {b}.")
    return True


def is_greater_than(a: int, b: int) -> bool:
    """
    Compare two integers and raise if the first is not strictly greater.

    :param a: The integer to be compared.
    :type a: int
    :param b: The integer to compare against.
    :type b: int
    :returns: True if `a` is greater than `b`.
    :rtype: bool
    :raises ValueError: If `a` is less than or equal to `b`.
    """
    if a <= b:
        raise ValueError(f"Value {a} is less than or equal to the permitted value {b}.")
    return True
