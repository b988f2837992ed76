#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Lane Affordance - Interface de Linha de Comando
===============================================

Gera o dataset sintético, treina a rede de afordância direcional, avalia
checkpoints, renderiza saídas e roda a varredura de hiperparâmetros.

Subcomandos:
- gen-data   grava amostras de treino e de avaliação (arrays + JSON)
- train      treino online; registra o run em .data/runs.json
- eval       avalia um checkpoint (last, best ou caminho) numa partição
- render     PNG com mapa de calor de SLA e setas por modo
- sweep      treina os experimentos do arquivo (ou os sete de referência)

Configuração .env (opcional):
DSLA_WORK_DIR=/caminho/para/resultados
DSLA_DEVICE=cpu
DSLA_LOG_LEVEL=INFO

Códigos de saída: 0 sucesso, 1 erro de uso, 2 falha de execução.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# Configuração de encoding para Windows
if sys.platform == "win32":
    import io
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8', errors='replace')
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8', errors='replace')

from lane_affordance.config import AppConfig, load_config, load_environment, save_config
from lane_affordance.dataset_io import generate_dataset
from lane_affordance.errors import LaneAffordanceError
from lane_affordance.evaluation import (
    build_eval_set,
    config_fingerprint,
    evaluate_model,
    run_sweep,
    reference_experiments,
)
from lane_affordance.network import load_checkpoint
from lane_affordance.render import render_eval_instance, sla_mass_inside_drivable
from lane_affordance.scene_synth import EvaluationSample, LayoutRecipe, build_layouts, desk_corpus, standard_corpus
from lane_affordance.trainer import DirectionalLaneTrainer
from run_registry import RunRegistry

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

# Configuração de logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def safe_print(message, fallback_message=None):
    """Imprime mensagem com fallback para sistemas sem suporte a Unicode"""
    try:
        print(message)
    except UnicodeEncodeError:
        if fallback_message:
            print(fallback_message)
        else:
            clean_message = message.encode('ascii', errors='ignore').decode('ascii')
            print(clean_message)


class CLILogHandler:
    """Handler para logs da CLI que imprime diretamente no console"""

    def __init__(self, verbose=False):
        self.verbose = verbose

    def log_callback(self, message):
        if self.verbose:
            safe_print(message)
        elif not message.startswith('[DEBUG]'):
            clean_message = message
            if message.startswith('['):
                clean_message = message.split('] ', 1)[-1] if '] ' in message else message
            safe_print(clean_message)


class CLIArgumentParser(argparse.ArgumentParser):
    """Erros de uso mostram a ajuda completa e saem com código 1 (o argparse usaria 2)."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"❌ ERRO: {message}\n")


# ----------------------------------------------------------------------
# Utilidades
# ----------------------------------------------------------------------
def _corpus(config: AppConfig) -> Dict[str, List[LayoutRecipe]]:
    return desk_corpus() if config.data.corpus == "desk" else standard_corpus()


def _out_dir(config: AppConfig, work_dir: Path) -> Path:
    out = Path(config.data.out_dir).expanduser()
    return out if out.is_absolute() else work_dir / out


def _eval_sets(config: AppConfig, splits: Sequence[str]) -> Dict[str, List[EvaluationSample]]:
    corpus = _corpus(config)
    grid_side = config.network.input_side
    eval_sets = {}
    for split in splits:
        recipes = corpus.get(split, [])
        layouts = build_layouts(recipes, grid_side=grid_side, seed=config.train.seed)
        eval_sets[split] = build_eval_set(
            layouts,
            [recipe.name for recipe in recipes],
            instances=config.train.eval_instances,
            seed=config.train.seed,
        )
    return eval_sets


def _splits(choice: str) -> List[str]:
    return ["train", "test"] if choice == "all" else [choice]


def _report_line(report) -> str:
    return f"   📄 {report.split}: SLA={report.aggregate_sla:.4f} DA={report.aggregate_da:.4f}"


# ----------------------------------------------------------------------
# Subcomandos
# ----------------------------------------------------------------------
def cmd_gen_data(args, config: AppConfig, env, log_handler: CLILogHandler) -> int:
    out_dir = _out_dir(config, env.work_dir)
    manifest = generate_dataset(
        _corpus(config),
        out_dir,
        samples_per_layout=config.data.samples_per_layout,
        seed=config.train.seed,
        max_workers=config.data.max_workers,
        grid_side=config.network.input_side,
        eval_instances=config.train.eval_instances,
        log_callback=log_handler.log_callback,
    )
    for split, counts in manifest.counts.items():
        safe_print(f"   📄 {split}: {counts['samples']} amostras de treino, {counts['eval']} de avaliação")
    return EXIT_OK


def cmd_train(args, config: AppConfig, env, log_handler: CLILogHandler) -> int:
    out_dir = _out_dir(config, env.work_dir)
    corpus = _corpus(config)
    layouts = build_layouts(corpus["train"], grid_side=config.network.input_side, seed=config.train.seed)
    eval_sets = _eval_sets(config, ["train", "test"])

    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = save_config(config, out_dir / "config.cfg")
    trainer = DirectionalLaneTrainer(
        config.network,
        config.train,
        device=args.device or env.device,
        log_callback=log_handler.log_callback,
    )
    result = trainer.train(layouts, eval_sets, out_dir, resume_from=args.resume)

    registry = RunRegistry(env.work_dir)
    epochs = int(result.eval_history["epoch"].max()) if not result.eval_history.empty else 0
    run = registry.register_run(
        out_dir,
        config_path=config_path,
        seed=config.train.seed,
        fingerprint=trainer.fingerprint,
        epochs_completed=epochs,
    )
    safe_print(f"\n✅ Treino concluído (run {run.run_id}): {len(result.records)} passos")
    for report in result.final_reports.values():
        safe_print(_report_line(report))
    safe_print(f"   💾 Melhor checkpoint: {result.best_checkpoint}")
    return EXIT_OK


def cmd_eval(args, config: AppConfig, env, log_handler: CLILogHandler) -> int:
    checkpoint = RunRegistry(env.work_dir).resolve_checkpoint(args.checkpoint)
    model, manifest = load_checkpoint(checkpoint, map_location=args.device or env.device)
    out_dir = _out_dir(config, env.work_dir) if args.out else checkpoint.parent / "eval"
    if model.config.input_side != config.network.input_side:
        raise LaneAffordanceError(
            f"Checkpoint com entrada {model.config.input_side} e configuração com {config.network.input_side}"
        )
    fingerprint = config_fingerprint(model.config)
    for split, samples in _eval_sets(config, _splits(args.split)).items():
        report = evaluate_model(model, samples, split, config.train.circular, fingerprint, manifest.get("epoch"))
        path = report.write(out_dir)
        safe_print(_report_line(report))
        log_handler.log_callback(f"[DEBUG] Relatório gravado em {path}")
    safe_print(f"\n✅ Avaliação gravada em: {out_dir}")
    return EXIT_OK


def cmd_render(args, config: AppConfig, env, log_handler: CLILogHandler) -> int:
    checkpoint = RunRegistry(env.work_dir).resolve_checkpoint(args.checkpoint)
    model, _ = load_checkpoint(checkpoint, map_location=args.device or env.device)
    samples = _eval_sets(config, [args.split])[args.split]
    if args.layout:
        samples = [sample for sample in samples if sample.name == args.layout]
        if not samples:
            raise LaneAffordanceError(f"Layout '{args.layout}' não existe na partição '{args.split}'")
    if not 0 <= args.instance < len(samples):
        raise LaneAffordanceError(f"Instância {args.instance} fora do intervalo (0..{len(samples) - 1})")
    sample = samples[args.instance]

    out_dir = _out_dir(config, env.work_dir) if args.out else checkpoint.parent / "render"
    path = out_dir / f"{sample.name}_{args.instance:02d}.png"
    result, raw = render_eval_instance(model, sample.context, config.render, path, config.train.circular)
    inside = sla_mass_inside_drivable(raw, sample.context, config.render.threshold)
    safe_print(f"\n✅ Imagem criada: {result.path} ({result.arrow_count} setas)")
    safe_print(f"   📄 SLA dentro da região trafegável: {100 * inside:.1f}%")
    return EXIT_OK


def cmd_sweep(args, config: AppConfig, env, log_handler: CLILogHandler) -> int:
    experiments = config.experiment_specs() or reference_experiments(config.train)
    corpus = _corpus(config)
    layouts = build_layouts(corpus["train"], grid_side=config.network.input_side, seed=config.train.seed)
    results = run_sweep(
        experiments,
        layouts,
        _eval_sets(config, ["train", "test"]),
        config.network,
        _out_dir(config, env.work_dir),
        device=args.device or env.device,
        log_callback=log_handler.log_callback,
    )
    safe_print(f"\n✅ Varredura concluída: {len(results)} experimentos")
    safe_print(results.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = CLIArgumentParser(add_help=False)
    common.add_argument('--config', help='Arquivo .cfg (padrão: escala desk embutida)')
    common.add_argument('--seed', type=int, help='Semente (sobrescreve [train] seed)')
    common.add_argument('--out', help='Diretório de saída (sobrescreve [data] out_dir)')
    common.add_argument('--device', help='cpu ou cuda (padrão: DSLA_DEVICE)')
    common.add_argument('-v', '--verbose', action='store_true', help='Modo verboso (mostra logs detalhados)')

    parser = CLIArgumentParser(
        prog='lane_affordance_cli.py',
        description='Afordância direcional de faixas - dataset, treino, avaliação e renderização',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exemplos de uso:
  python lane_affordance_cli.py gen-data --config configs/desk.cfg --out data/
  python lane_affordance_cli.py train --config configs/desk.cfg --out runs/desk
  python lane_affordance_cli.py eval --config configs/desk.cfg --checkpoint last --split test
  python lane_affordance_cli.py render --config configs/desk.cfg --checkpoint best --layout t_intersection_wide_stem
  python lane_affordance_cli.py sweep --config configs/sweep.cfg --out runs/sweep
        """,
    )
    subparsers = parser.add_subparsers(dest='command', metavar='COMANDO', parser_class=CLIArgumentParser)
    subparsers.required = True

    subparsers.add_parser('gen-data', parents=[common], help='Gera o dataset em disco')
    train = subparsers.add_parser('train', parents=[common], help='Treina a rede')
    train.add_argument('--resume', help='Checkpoint (com estado de treino) para retomar')

    for name, help_text in (('eval', 'Avalia um checkpoint'), ('render', 'Renderiza a saída de um checkpoint')):
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.add_argument('--checkpoint', default='last', help='last, best ou caminho do .pt (padrão: last)')
        choices = ('train', 'test', 'all') if name == 'eval' else ('train', 'test')
        sub.add_argument('--split', default='test', choices=choices, help='Partição avaliada (padrão: test)')
        if name == 'render':
            sub.add_argument('--layout', help='Nome do layout (padrão: primeiro da partição)')
            sub.add_argument('--instance', type=int, default=0, help='Índice da instância aumentada')

    subparsers.add_parser('sweep', parents=[common], help='Roda a varredura de experimentos')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Função principal da aplicação"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        env = load_environment()
        level = logging.DEBUG if args.verbose else getattr(logging, env.log_level)
        logging.getLogger().setLevel(level)

        config = load_config(args.config) if args.config else AppConfig.desk()
        config = config.apply_overrides(seed=args.seed, out=args.out)
        log_handler = CLILogHandler(args.verbose)
        if not args.verbose:
            safe_print(f"🔄 {args.command}: corpus {config.data.corpus}, semente {config.train.seed}",
                       f"{args.command}: corpus {config.data.corpus}, semente {config.train.seed}")
        return COMMANDS[args.command](args, config, env, log_handler)

    except (LaneAffordanceError, OSError, ValueError, RuntimeError) as e:
        safe_print(f"❌ ERRO: {e}", f"ERRO: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        safe_print(f"❌ ERRO: Erro inesperado: {e}", f"ERRO: Erro inesperado: {e}")
        if args.verbose:
            logger.exception("Falha inesperada")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
