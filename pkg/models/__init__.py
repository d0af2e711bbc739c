"""Models: autodiff engine, layers, enhancer, transducer, selection module."""
