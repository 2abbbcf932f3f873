from purebox.transfer.evaluate import TransferReport, evaluate_transfer, verify_oracle_purity
from purebox.transfer.grid import GridEntry, GridKey, GridRow, GridTable, aggregate_grid, grid_from_rows
from purebox.transfer.oracle import HttpOracle, SubprocessOracle, TargetOracle
