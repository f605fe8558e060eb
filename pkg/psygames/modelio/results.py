"""
Result records and their CSV/JSON serialization.

CSV output is long format: for every equilibrium, one row per (player,
action) probability followed by one row per player utility. Welfare and
residual repeat on every row of an equilibrium so each row stands alone.
"""
import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, IO, List, Optional, Sequence, Union

from psygames.exceptions import ResultsIoError
from psygames.services.game_core import EquilibriumCandidate
from psygames.utils.helpers import format_number

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'json')
BASE_COLUMNS = ('model',)
ROW_COLUMNS = ('eq_index', 'player', 'action', 'prob', 'utility', 'welfare', 'residual')
STATUS_OK = 'ok'
STATUS_NO_EQUILIBRIUM = 'no_equilibrium'
STATUS_ERROR = 'error'


@dataclass
class EquilibriumRow:
    """One equilibrium: its support, strategies and payoffs."""
    support: str
    probabilities: Dict[str, Dict[str, float]]
    utilities: Dict[str, float]
    welfare: float
    residual: float

    @classmethod
    def from_candidate(cls, players: Sequence[str], candidate: EquilibriumCandidate) -> 'EquilibriumRow':
        probs = {player: {a: float(p) for a, p in dist.items()}
                 for player, dist in zip(players, candidate.profile.probs)}
        utilities = {player: float(u) for player, u in zip(players, candidate.payoffs)}
        return cls(candidate.support.label(), probs, utilities, float(sum(utilities.values())),
                   float(candidate.residual))


@dataclass
class ResultRecord:
    """Equilibria found for one model under one set of parameter bindings."""
    model: str
    params: Dict[str, float] = field(default_factory=dict)
    equilibria: List[EquilibriumRow] = field(default_factory=list)
    status: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> 'ResultRecord':
        rows = [EquilibriumRow(**row) for row in data.get('equilibria', [])]
        return cls(data['model'], dict(data.get('params', {})), rows, data.get('status'))


def _param_names(records: Sequence[ResultRecord]) -> List[str]:
    names: List[str] = []
    for record in records:
        for name in record.params:
            if name not in names:
                names.append(name)
    return names


def _csv_rows(records: Sequence[ResultRecord]):
    params = _param_names(records)
    with_status = any(r.status is not None for r in records)
    header = list(BASE_COLUMNS) + [f"param:{n}" for n in params] + list(ROW_COLUMNS)
    if with_status:
        header.append('status')
    yield header
    for record in records:
        prefix = [record.model] + [format_number(record.params[n]) if n in record.params else '' for n in params]
        suffix = [record.status or STATUS_OK] if with_status else []
        if not record.equilibria:
            yield prefix + [''] * len(ROW_COLUMNS) + suffix
            continue
        for index, eq in enumerate(record.equilibria):
            tail = [format_number(eq.welfare), format_number(eq.residual)]
            for player, dist in eq.probabilities.items():
                for action, p in dist.items():
                    yield prefix + [str(index), player, action, format_number(p), ''] + tail + suffix
            for player, u in eq.utilities.items():
                yield prefix + [str(index), player, '', '', format_number(u)] + tail + suffix


def render_results(records: Sequence[ResultRecord], fmt: str = 'csv') -> str:
    """Serialize records to CSV or JSON text."""
    if fmt not in FORMATS:
        raise ValueError(f"Unknown result format '{fmt}'; expected one of {FORMATS}")
    if fmt == 'json':
        return json.dumps([asdict(r) for r in records], indent=2) + '\n'
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerows(_csv_rows(records))
    return buffer.getvalue()


def write_results(records: Sequence[ResultRecord], fmt: str, destination: Union[str, IO[str]]) -> None:
    """
    Write records to a path or an open text stream.

    Args:
        records (Sequence[ResultRecord]): Records to write.
        fmt (str): ``'csv'`` or ``'json'``.
        destination (Union[str, IO[str]]): File path or writable stream.

    Raises:
        ResultsIoError: If the destination cannot be written.
    """
    text = render_results(records, fmt)
    try:
        if isinstance(destination, str):
            with open(destination, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
            logger.info(f"Wrote {len(records)} result records to {destination}")
        else:
            destination.write(text)
    except OSError as e:
        logger.error(f"Cannot write results to {destination}: {e}")
        raise ResultsIoError(f"Cannot write results: {e}") from e


def _read_csv(text: str) -> List[ResultRecord]:
    reader = csv.DictReader(io.StringIO(text))
    params = [c[len('param:'):] for c in (reader.fieldnames or []) if c.startswith('param:')]
    records: List[ResultRecord] = []
    keys: Dict[tuple, ResultRecord] = {}
    for row in reader:
        bound = {n: float(row[f"param:{n}"]) for n in params if row.get(f"param:{n}")}
        key = (row['model'], tuple(sorted(bound.items())))
        record = keys.get(key)
        if record is None:
            record = ResultRecord(row['model'], bound, [], row.get('status'))
            keys[key] = record
            records.append(record)
        if not row['eq_index']:
            continue
        index = int(row['eq_index'])
        while len(record.equilibria) <= index:
            record.equilibria.append(EquilibriumRow('', {}, {}, float(row['welfare']), float(row['residual'])))
        eq = record.equilibria[index]
        if row['action']:
            eq.probabilities.setdefault(row['player'], {})[row['action']] = float(row['prob'])
        else:
            eq.utilities[row['player']] = float(row['utility'])
    for record in records:
        for eq in record.equilibria:
            eq.support = 'x'.join('{' + ','.join(a for a, p in dist.items() if p > 0) + '}'
                                  for dist in eq.probabilities.values())
    return records


def read_results(source: Union[str, IO[str]], fmt: str) -> List[ResultRecord]:
    """
    Read records written by ``write_results``.

    CSV carries no support column, so supports are rebuilt from the
    probabilities; JSON restores records exactly.

    Raises:
        ResultsIoError: If the source cannot be read or is malformed.
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown result format '{fmt}'; expected one of {FORMATS}")
    try:
        if isinstance(source, str):
            with open(source, encoding='utf-8') as f:
                text = f.read()
        else:
            text = source.read()
        if fmt == 'json':
            return [ResultRecord.from_dict(item) for item in json.loads(text)]
        return _read_csv(text)
    except OSError as e:
        raise ResultsIoError(f"Cannot read results: {e}") from e
    except (KeyError, TypeError, ValueError) as e:
        raise ResultsIoError(f"Malformed {fmt} results: {e}") from e


def render_experiment(model: str, params: Dict[str, float], report, fmt: str = 'csv') -> str:
    """
    Serialize an experiment report.

    CSV rows are ``model,param:*,run,quantity,name,value`` where ``run`` is a
    run index, ``mean`` or ``std`` and ``quantity`` is ``utility`` (per
    player), ``action`` (reach-weighted probability per action) or
    ``class_action`` (the same per state class, named ``CLASS:ACTION``).
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown result format '{fmt}'; expected one of {FORMATS}")
    if fmt == 'json':
        return json.dumps({'model': model, 'params': params, 'report': asdict(report)}, indent=2) + '\n'
    prefix = [model] + [format_number(v) for v in params.values()]
    classes = report.class_probabilities or [{} for _ in report.initial_utilities]
    series = []
    for index, (utilities, actions, by_class) in enumerate(zip(report.initial_utilities, report.action_probabilities,
                                                                classes)):
        series.append((str(index), dict(zip(report.players, utilities)), actions, by_class))
    series.append(('mean', dict(zip(report.players, report.utility_mean)), report.action_mean, report.class_mean))
    series.append(('std', dict(zip(report.players, report.utility_std)), report.action_std, report.class_std))

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(list(BASE_COLUMNS) + [f"param:{n}" for n in params] + ['run', 'quantity', 'name', 'value'])
    for run, utilities, actions, by_class in series:
        for player, u in utilities.items():
            writer.writerow(prefix + [run, 'utility', player, format_number(u)])
        for action, p in actions.items():
            writer.writerow(prefix + [run, 'action', action, format_number(p)])
        for label, probs in by_class.items():
            for action, p in probs.items():
                writer.writerow(prefix + [run, 'class_action', f"{label}:{action}", format_number(p)])
    return buffer.getvalue()
