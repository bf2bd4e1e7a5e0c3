# Circuit Synthesis Workbench
