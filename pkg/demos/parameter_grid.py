# Parameter counts for the published model grid, from the closed-form count
# and from a tensor-by-tensor walk of an actually built model.
#
#   python3 demos/parameter_grid.py

from transfornn import tables
from transfornn.models import LanguageModel, ModelConfig, count_parameters, parameter_count

print(f"{'model':44s} {'ours':>8s} {'reported':>8s}  gap")
for row in tables.TABLE1:
    n = parameter_count(row.config(tables.PTB_VOCAB))
    gap = n / (row.ptb_millions * 1e6) - 1
    print(f"{row.label:44s} {n / 1e6:7.2f}M {row.ptb_millions:7.1f}M  {gap:+.2%}")

# The cascade rows only line up with an untied output projection.
tied = ModelConfig("transfornn", 10000, d=512, n_layers=2, m_layers=2, heads=8, d_ff=1024, tied=True)
print()
print("transfornn d=512 tied:  ", parameter_count(tied))
print("transfornn d=512 untied:", parameter_count(tied.replace(tied=False)))

small = ModelConfig("transfornn", 1000, d=64, n_layers=2, m_layers=1, heads=4, d_ff=128)
print("walker agrees with formula:", count_parameters(LanguageModel(small)) == parameter_count(small))
