'''SGD training with the plateau learning-rate schedule.

The learning rate is divided by ``decay_factor`` whenever the validation
loss has not improved by ``min_delta`` for ``plateau_patience`` epochs.
Training stops when the plateau after the last allowed decay is reached.
'''
from __future__ import annotations
import math
import dataclasses
from pathlib import Path

import torch
import tqdm
from torch.utils.data import DataLoader

from ..config import TRAIN_LOG_NAME
from ..errors import TrainingDivergedError, ValidationError
from ..losses import stage1_loss, stage2_loss, LossValue
from ..nets import ModelConfig, build_model, StageTwoOutput, EncoderConfig
from ..phantom import DatasetManifest
from ..storage import save_checkpoint, RecordWriter
from ..supervision import EdgeKind
from ..util import seed_everything
from .config import TrainConfig
from .data import load_samples, Stage1Dataset, Stage2Dataset

import logging
log = logging.getLogger(__name__)


class PlateauSchedule:
    def __init__(self, lr0, patience=3, factor=10.0, max_decays=2, min_delta=1e-4):
        self.lr = lr0
        self.patience = patience
        self.factor = factor
        self.max_decays = max_decays
        self.min_delta = min_delta
        self.best = math.inf
        self.bad_epochs = 0
        self.decays = 0
        self.history = [lr0]

    def step(self, loss) -> str:
        '''Feed one validation loss; returns ``continue``, ``decay`` or ``stop``.'''
        if loss < self.best - self.min_delta:
            self.best = loss
            self.bad_epochs = 0
            return 'continue'
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return 'continue'
        self.bad_epochs = 0
        if self.decays >= self.max_decays:
            return 'stop'
        self.decays += 1
        self.lr /= self.factor
        self.history.append(self.lr)
        return 'decay'


@dataclasses.dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    best_val_loss: float
    epochs: int
    lr_history: list[float]
    val_losses: list[float]


def compute_loss(model, batch) -> LossValue:
    '''Stage objective picked from the model's output type.'''
    out = model(batch['image'])
    if isinstance(out, StageTwoOutput):
        return stage2_loss(batch['mask'], batch.get('edge'), out)
    return stage1_loss(batch['mask'], torch.sigmoid(out))


def _loader(ds, cfg, shuffle, workers):
    generator = torch.Generator().manual_seed(cfg.seed)
    return DataLoader(ds, batch_size=cfg.batch_size, shuffle=shuffle, num_workers=workers, generator=generator)


def evaluate_loss(model, loader, objective=compute_loss):
    '''Sample-weighted mean of every loss component over a loader.'''
    model.eval()
    sums, n = {}, 0
    with torch.no_grad():
        for batch in loader:
            values = objective(model, batch).as_floats()
            size = len(batch['image'])
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v * size
            n += size
    return {k: v / max(n, 1) for k, v in sums.items()}


def train_stage(model, train_ds, val_ds, cfg: TrainConfig, out_dir, model_config: ModelConfig,
                objective=compute_loss, workers=0, meta=None) -> TrainResult:
    '''Train ``model`` until the plateau schedule stops it.

    Writes ``best.ckpt`` (lowest validation loss), ``last.ckpt`` and a
    ``train_log.jsonl`` with one train and one val record per epoch.
    '''
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(cfg.seed)

    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr0, momentum=cfg.momentum)
    schedule = PlateauSchedule(cfg.lr0, cfg.plateau_patience, cfg.decay_factor, cfg.max_decays, cfg.min_delta)
    train_loader = _loader(train_ds, cfg, True, workers)
    val_loader = _loader(val_ds, cfg, False, workers)
    meta = {**(meta or {}), 'train_config': dataclasses.asdict(cfg)}

    best_path, last_path = out_dir / 'best.ckpt', out_dir / 'last.ckpt'
    best_val = math.inf
    val_losses = []
    epoch = 0
    with RecordWriter(out_dir / TRAIN_LOG_NAME) as records:
        pbar = tqdm.tqdm(range(cfg.max_epochs), desc='epochs')
        for epoch in pbar:
            train_ds.set_epoch(epoch)
            model.train()
            sums, n = {}, 0
            for step, batch in enumerate(train_loader):
                loss = objective(model, batch)
                if not torch.isfinite(loss.total):
                    records.write(epoch=epoch, split='train', step=step, lr=schedule.lr, diverged=True)
                    raise TrainingDivergedError(epoch, step, float(loss.total))
                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()
                size = len(batch['image'])
                for k, v in loss.as_floats().items():
                    sums[k] = sums.get(k, 0.0) + v * size
                n += size
            train_values = {k: v / max(n, 1) for k, v in sums.items()}
            records.write(epoch=epoch, split='train', lr=schedule.lr, **train_values)

            val_values = evaluate_loss(model, val_loader, objective)
            records.write(epoch=epoch, split='val', lr=schedule.lr, **val_values)
            val = val_values['total']
            val_losses.append(val)
            pbar.set_description(f'train {train_values["total"]:.4f} val {val:.4f} lr {schedule.lr:g}')

            if val < best_val:
                best_val = val
                save_checkpoint(best_path, model, model_config, {**meta, 'epoch': epoch, 'val_loss': val})
            save_checkpoint(last_path, model, model_config, {**meta, 'epoch': epoch, 'val_loss': val})

            action = schedule.step(val)
            if action == 'decay':
                for group in optimizer.param_groups:
                    group['lr'] = schedule.lr
                log.info('epoch %d: validation loss plateaued, lr -> %g', epoch, schedule.lr)
            elif action == 'stop':
                log.info('epoch %d: plateau after %d decays, stopping', epoch, schedule.decays)
                break

    return TrainResult(best_path, last_path, best_val, epoch + 1, schedule.history, val_losses)


# ---------------------------------------------------------------------------- #
#                                  Stage runs                                  #
# ---------------------------------------------------------------------------- #

def _split_samples(data_dir):
    manifest = DatasetManifest.read(data_dir)
    manifest.check_disjoint()
    train_ids, val_ids = manifest.split('train'), manifest.split('val')
    if not train_ids:
        raise ValidationError('training split is empty')
    if not val_ids:
        log.warning('validation split is empty, validating on the training cases')
        val_ids = train_ids
    return load_samples(manifest, train_ids), load_samples(manifest, val_ids)


def train_stage1(data_dir, out_dir, cfg: TrainConfig = TrainConfig(), encoder: EncoderConfig = EncoderConfig(),
                 kind='r2unet', edge_kind=EdgeKind.dist, workers=0, samples=None) -> TrainResult:
    '''Train the coarse liver model (R2UNet, or E2Net with one channel).'''
    train_samples, val_samples = samples or _split_samples(data_dir)
    model_config = ModelConfig(kind, encoder, out_channels=1)
    edge_kind = edge_kind if kind == 'e2net' else None
    common = dict(crop=cfg.stage1_crop, liver_fraction=cfg.liver_fraction, edge_kind=edge_kind)
    train_ds = Stage1Dataset(train_samples, seed=cfg.seed, train=True, epoch_size=cfg.epoch_size, **common)
    val_ds = Stage1Dataset(val_samples, seed=cfg.seed, train=False, **common)
    seed_everything(cfg.seed)
    model = build_model(model_config)
    return train_stage(model, train_ds, val_ds, cfg, out_dir, model_config, workers=workers,
                       meta={'stage': 1, 'supervision': edge_kind})


def train_stage2(data_dir, out_dir, cfg: TrainConfig = TrainConfig(), encoder: EncoderConfig = EncoderConfig(),
                 edge_branch=True, dcff=True, supervision=EdgeKind.dist, workers=0, samples=None) -> TrainResult:
    '''Train the fine liver/tumor model on ground-truth liver crops.'''
    train_samples, val_samples = samples or _split_samples(data_dir)
    model_config = ModelConfig('e2net', encoder, out_channels=2, edge_branch=edge_branch, dcff=dcff and edge_branch)
    edge_kind = EdgeKind(supervision) if edge_branch else None
    common = dict(size=cfg.stage2_size, pad_range=cfg.pad_range, edge_kind=edge_kind, infer_pad=cfg.infer_pad)
    train_ds = Stage2Dataset(train_samples, seed=cfg.seed, train=True, epoch_size=cfg.epoch_size, **common)
    val_ds = Stage2Dataset(val_samples, seed=cfg.seed, train=False, **common)
    seed_everything(cfg.seed)
    model = build_model(model_config)
    return train_stage(model, train_ds, val_ds, cfg, out_dir, model_config, workers=workers,
                       meta={'stage': 2, 'supervision': edge_kind})
