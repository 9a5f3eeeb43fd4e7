"""Published model grids with their reported parameter counts.

Counts are in millions.  PTB uses a 10K vocabulary; the WikiText-2
vocabulary is only given as "33K", approximated here by 33278 (the size of
the standard WikiText-2 release).
"""

from dataclasses import dataclass
from typing import Optional

from .models import ModelConfig

PTB_VOCAB = 10000
WIKITEXT2_VOCAB = 33278
LIBRISPEECH_VOCAB = 200000


@dataclass(frozen=True)
class GridRow:
    table: str
    family: str
    d: int
    n_layers: int
    m_layers: int
    ptb_millions: Optional[float] = None
    wikitext_millions: Optional[float] = None
    d_ff: int = 1024
    tied: bool = True

    def config(self, vocab_size, seed=0) -> ModelConfig:
        return ModelConfig(self.family, vocab_size, d=self.d, n_layers=self.n_layers,
                           m_layers=self.m_layers, heads=8, d_ff=self.d_ff, tied=self.tied,
                           lstm_hidden=self.d, seed=seed)

    @property
    def label(self):
        return f"{self.table} {self.family} d={self.d} N={self.n_layers} M={self.m_layers}"


def _t1(family, d, n, m, ptb, wiki, tied=True):
    return GridRow("table1", family, d, n, m, ptb, wiki, tied=tied)


# TransfoRNN counts only add up with a separate (untied) output projection.
TABLE1 = [
    _t1("transformer", 512, 2, 0, 9.3, 21.3),
    _t1("transformer", 512, 4, 0, 13.5, 25.5),
    _t1("transformer", 512, 8, 0, 22.0, 33.9),
    _t1("transformer", 512, 16, 0, 38.8, 50.7),
    _t1("transfornn", 512, 2, 2, 18.7, 42.5, tied=False),
    _t1("transfornn", 512, 4, 2, 22.9, 46.7, tied=False),
    _t1("transfornn", 512, 8, 2, 31.3, 55.1, tied=False),
    _t1("lstm", 512, 0, 2, 9.3, 21.3),
    _t1("transformer", 1024, 2, 0, 22.9, 46.7),
    _t1("transformer", 1024, 4, 0, 35.5, 59.3),
    _t1("transformer", 1024, 8, 0, 60.7, 84.5),
    _t1("transformer", 1024, 16, 0, 111.1, 134.9),
    _t1("transfornn", 1024, 2, 2, 49.9, 97.6, tied=False),
    _t1("transfornn", 1024, 4, 2, 62.5, 110.2, tied=False),
    _t1("transfornn", 1024, 8, 2, 87.7, 135.4, tied=False),
    _t1("lstm", 1024, 0, 2, 27.0, 50.9),
]

TABLE2 = [
    GridRow("table2", "transfornn", 512, 2, 1, 16.6, 40.4, tied=False),
    GridRow("table2", "transfornn", 512, 2, 2, 18.7, 42.5, tied=False),
    GridRow("table2", "transfornn", 512, 2, 3, 20.8, 44.6, tied=False),
    GridRow("table2", "transfornn", 1024, 2, 1, 41.5, 89.2, tied=False),
    GridRow("table2", "transfornn", 1024, 2, 2, 49.9, 97.6, tied=False),
    GridRow("table2", "transfornn", 1024, 2, 3, 58.3, 106.0, tied=False),
]

# speech-recognition models: d=1024, 2048-wide feed-forward, no counts reported
TABLE5 = [
    GridRow("table5", "transformer", 1024, 2, 0, d_ff=2048),
    GridRow("table5", "transformer", 1024, 4, 0, d_ff=2048),
    GridRow("table5", "transformer", 1024, 8, 0, d_ff=2048),
    GridRow("table5", "transfornn", 1024, 2, 2, d_ff=2048, tied=False),
]
