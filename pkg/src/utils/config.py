"""
Configurações do projeto usando Pydantic Settings
"""

from typing import List

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Configurações principais do projeto"""

    # ===============================================
    # Logging
    # ===============================================

    log_level: str = "INFO"  # DEBUG, INFO, WARNING, ERROR

    # ===============================================
    # Model Settings (CMLA)
    # ===============================================

    # Melhor configuração encontrada no experimento P3
    model_rnn_variant: str = "B-LSTM"  # GRU, LSTM, B-GRU, B-LSTM
    model_hidden_units: int = 50  # Unidades escondidas por direção
    model_attention_layers: int = 2  # Camadas de atenção acopladas
    model_tensor_dim: int = 20  # Primeira dimensão dos tensores (K)
    model_dropout_rate: float = 0.5
    model_embedding_mode: str = "double"  # double, general, domain, hybrid
    model_seed: int = 42

    # Faixas de inicialização dos pesos
    model_init_weight_range: float = 0.08
    model_init_prototype_range: float = 0.2
    model_lstm_forget_bias: float = 1.0

    # ===============================================
    # Training Settings
    # ===============================================

    train_batch_size: int = 32
    train_max_epochs: int = 200
    train_patience: int = 5  # Épocas sem melhora antes do early stopping

    # Constantes do otimizador nadam
    train_learning_rate: float = 0.002
    train_beta1: float = 0.9
    train_beta2: float = 0.999
    train_epsilon: float = 1e-8
    train_seed: int = 42

    # ===============================================
    # Embedding Settings (estilo fastText)
    # ===============================================

    # Dimensão e iterações por tipo de embedding
    embedding_general_dim: int = 300
    embedding_general_epochs: int = 5
    embedding_domain_dim: int = 100
    embedding_domain_epochs: int = 30
    embedding_hybrid_dim: int = 300
    embedding_hybrid_epochs: int = 5

    # Demais parâmetros seguem os padrões do fastText
    embedding_window: int = 5
    embedding_negatives: int = 5
    embedding_ngram_min: int = 3
    embedding_ngram_max: int = 6
    embedding_buckets: int = 2_000_000
    embedding_learning_rate: float = 0.05
    embedding_min_count: int = 1  # Corpora pequenos: manter todas as palavras
    embedding_seed: int = 7
    embedding_feature_cache_size: int = 50_000  # Vetores compostos mantidos por EmbeddingFeatures

    # ===============================================
    # Synthetic Corpus Settings
    # ===============================================

    synth_size: int = 1000  # Total de sentenças (60/20/20)
    synth_coupling: float = 0.5  # Fração de aspectos ambíguos
    synth_aspect_vocab: int = 12
    synth_opinion_vocab: int = 10
    synth_embedding_sentences: int = 3000  # Tamanho dos corpora sem rótulo
    synth_seed: int = 13

    # ===============================================
    # Experiment Settings
    # ===============================================

    # Grade padrão do P3: 3 x 3 x 3 x 3 = 81 combinações
    grid_hidden_units: List[int] = [50, 75, 100]
    grid_attention_layers: List[int] = [1, 2, 3]
    grid_tensor_dim: List[int] = [10, 15, 20]
    grid_dropout_rate: List[float] = [0.2, 0.35, 0.5]

    # Células da grade podem rodar em processos separados
    grid_workers: int = 1

    # Nome do arquivo com o vencedor de cada cenário
    experiment_winner_file: str = "winner.yaml"

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "CMLA_"
        extra = "ignore"


# Global instance of settings
settings = Settings()
