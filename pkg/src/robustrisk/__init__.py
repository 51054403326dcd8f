"""Standard and adversarial risk of linear models in high dimensions."""
