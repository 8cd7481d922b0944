"""
Errors raised by ionpf.

Every error carries an ``exit_code`` that the command line entry points
return to the shell:

    * 2 - input errors (bad config, missing file, architecture mismatch)
    * 3 - data errors (corrupted checkpoint, snapshot version mismatch)
    * 4 - numeric failures (collapsed filter, non-finite gradient)

Example:
    >>> from ionpf.exceptions import *  # NOQA
    >>> ex = FilterCollapseError('all outer weights are -inf')
    >>> ex = add_exception_note(ex, 'time step 3', force_legacy=True)
    >>> print(ex)
    all outer weights are -inf
    time step 3
    >>> assert ex.exit_code == 4
    >>> assert isinstance(ex, ArithmeticError)
"""
import ubelt as ub


class IonpfError(Exception):
    """ Base class of all errors raised deliberately by ionpf """
    exit_code = 1


class ConfigError(IonpfError, ValueError):
    """ A configuration file or value could not be accepted """
    exit_code = 2


class ArchitectureMismatchError(ConfigError):
    """ A checkpoint does not match the requested policy architecture """


class DataError(IonpfError, ValueError):
    """ Persisted data could not be read back """
    exit_code = 3


class CheckpointError(DataError):
    """ A policy checkpoint is corrupted or has the wrong format """


class SnapshotVersionError(DataError):
    """ A filter history snapshot was written by an incompatible version """


class NumericalError(IonpfError, ArithmeticError):
    """ A numeric failure that invalidates the current computation """
    exit_code = 4


class DegenerateWeightsError(NumericalError):
    """ Every log-weight is -inf, so the weights cannot be normalized """


class DegenerateCloudError(DegenerateWeightsError):
    """ Every theta particle of a cloud is incompatible with a transition """


class FilterCollapseError(NumericalError):
    """ Every outer particle of the nested filter has zero weight """


class NonFiniteGradientError(NumericalError):
    """ The policy score contains NaN or inf entries """


def add_exception_note(ex, note, force_legacy=False):
    """
    Attach diagnostic text to an exception.

    Uses PEP 678 notes when available (Python >= 3.11), otherwise builds a
    new exception of the same type with the note appended to its message.

    Args:
        ex (BaseException): the exception to annotate
        note (str | dict): extra information, dictionaries are formatted
            with :func:`ubelt.urepr`.
        force_legacy (bool): use the fallback even if notes are available

    Returns:
        BaseException: the annotated exception
    """
    if isinstance(note, dict):
        note = 'diagnostics = ' + ub.urepr(note, nl=1, precision=6)
    if not force_legacy and hasattr(ex, 'add_note'):
        ex.add_note(note)
        return ex
    else:
        return type(ex)(str(ex) + chr(10) + note)
