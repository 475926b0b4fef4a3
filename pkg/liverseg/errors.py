'''Exceptions raised across liverseg.

``cmd.cli_dispatch`` maps :class:`ValidationError` to exit code 1 and every
other error here (and plain ``OSError``) to exit code 2.
'''


class LiversegError(Exception):
    '''Base class for all liverseg errors.'''


class ValidationError(LiversegError, ValueError):
    '''Inputs or configuration violate a contract (shapes, values, sizes).'''


class VolumeReadError(LiversegError, OSError):
    '''A NIfTI file could not be read completely.'''


class PhantomGenerationError(LiversegError, RuntimeError):
    def __init__(self, seed, message='could not place tumor inside liver'):
        self.seed = seed
        super().__init__(f'{message} (seed={seed})')


class DegenerateEdgeError(LiversegError, ValueError):
    '''Distance transform requested on an edge image with no edge pixels.'''


class NoLiverError(LiversegError):
    '''The liver source used for cropping is empty.'''


class TrainingDivergedError(LiversegError, RuntimeError):
    def __init__(self, epoch, step, loss=float('nan')):
        self.epoch = epoch
        self.step = step
        super().__init__(f'loss diverged ({loss}) at epoch {epoch}, step {step}')


class InferenceError(LiversegError, RuntimeError):
    def __init__(self, slice_index, message='non-finite model output'):
        self.slice_index = slice_index
        super().__init__(f'{message} at slice {slice_index}')
