"""A tiered virtual machine for a small dynamically typed guest language."""
