# Utils package: signal processing, corpus, metrics, configuration and run logging
