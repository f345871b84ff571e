"""Exception hierarchy shared across the package."""


class BodyRegionError(Exception):
    """Base class for all package errors."""


# volume io
class NiftiError(BodyRegionError):
    pass


class MalformedHeader(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class DimensionMismatch(NiftiError):
    pass


class NotALabelMap(NiftiError):
    pass


class ObliqueVolume(BodyRegionError):
    """No dominant world axis for some voxel axis; slice analysis is meaningless."""


class EmptyVolume(BodyRegionError):
    """Label volume without a single nonzero voxel."""


# taxonomy
class TaxonomyError(BodyRegionError):
    pass


class UnknownClassName(TaxonomyError):
    pass


class InvalidThreshold(TaxonomyError):
    pass


class MissingRegionRule(TaxonomyError):
    pass


# labels
class LabelError(BodyRegionError):
    pass


class EmptyInput(LabelError):
    pass


class UnknownToken(LabelError):
    pass


class MixedOther(LabelError):
    pass


# mllm
class MissingEvidence(BodyRegionError):
    pass


class Unparseable(BodyRegionError):
    pass


class DegenerateAxis(BodyRegionError):
    pass


class TransportError(BodyRegionError):
    def __init__(self, message, scan_id=None):
        super().__init__(message if scan_id is None else f"[{scan_id}] {message}")
        self.scan_id = scan_id


# metrics / phantoms / cli
class EmptyDataset(BodyRegionError):
    pass


class SpecOverflow(BodyRegionError):
    pass


class BadConfig(BodyRegionError):
    pass


class NoInputs(BodyRegionError):
    pass
