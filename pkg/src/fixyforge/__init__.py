"""fixyforge: a compiler toolchain that freezes trained CNN front-end layers
into fully-pipelined fixed-weight hardware, verifies the result bit- and
cycle-accurately, emits synthesizable Verilog and explores the combined
fixed + programmable accelerator design space."""

__version__ = "0.1.0"
