"""Cell-free massive MIMO with a STAR-RIS under EMI and phase errors."""
