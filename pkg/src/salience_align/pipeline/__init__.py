"""Dataset handling, the end-to-end run and report rendering."""
