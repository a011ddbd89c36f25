"""Exception hierarchy shared by all irispad modules."""


class IrisPadError(Exception):
    """Base class for every error raised by irispad."""


# image / manifest I/O
class UnsupportedFormat(IrisPadError):
    pass


class CorruptFile(IrisPadError):
    pass


class DepthMismatch(IrisPadError):
    pass


class DuplicateSampleId(IrisPadError):
    pass


class MissingFile(IrisPadError):
    pass


class MalformedRow(IrisPadError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DimensionMismatch(IrisPadError):
    pass


# photometric stereo
class InvalidRig(IrisPadError):
    pass


class RankDeficient(IrisPadError):
    pass


class NonFiniteInput(IrisPadError):
    pass


# regions and scores
class InvalidGeometry(IrisPadError):
    pass


class EmptyRegion(IrisPadError):
    pass


class DegenerateRegion(IrisPadError):
    pass


class AllZeroWeights(IrisPadError):
    pass


# training / evaluation
class SingleClassDataset(IrisPadError):
    pass


class AllSectorsDegenerate(IrisPadError):
    pass


class SingleClass(IrisPadError):
    pass


class InsufficientData(IrisPadError):
    pass


class TagMismatch(IrisPadError):
    pass


class InvalidSpec(IrisPadError):
    pass
