"""Trainable network components, model assemblies, optimizer and training
loop. Everything is plain numpy with hand-derived backward passes; no
autograd framework is involved."""
