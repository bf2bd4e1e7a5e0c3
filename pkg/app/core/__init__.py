# Core logic (import from submodules: circuit, simulator, training, etc.)
